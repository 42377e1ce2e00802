//! Generates both synthetic dataset kinds and writes a few samples as PNGs.
//!
//! ```text
//! cargo run --example synthetic_data -- [out_dir]
//! ```

use std::path::PathBuf;

use semiseg::dataset::{generate_synthetic, io, SyntheticKind};

fn main() -> semiseg::Result<()> {
    let out: PathBuf =
        std::env::args().nth(1).map(Into::into).unwrap_or_else(|| "target/synthetic_demo".into());

    for kind in [SyntheticKind::Blobs, SyntheticKind::TwoIntensity] {
        let samples = generate_synthetic(kind, 6, (96, 96), 42)?;
        let dir = out.join(kind.as_str());
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("masks"))?;
        for s in &samples {
            io::write_gray_png(&s.image, &dir.join(format!("images/{}.png", s.id)))?;
            if let Some(mask) = s.diagnostic_mask()? {
                io::write_mask_png(mask, &dir.join(format!("masks/{}.png", s.id)))?;
                let fg = mask.count_class(1);
                let total = mask.height() * mask.width();
                println!(
                    "{}: split {:?}, foreground {:.1}%",
                    s.id,
                    s.split,
                    100.0 * fg as f64 / total as f64
                );
            }
        }
    }
    println!("\nwrote samples under {}", out.display());
    Ok(())
}
