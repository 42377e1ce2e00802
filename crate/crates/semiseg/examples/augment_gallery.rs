//! Applies each intensity transform, plus weak and strong policies, to one
//! synthetic image and writes the results side by side.
//!
//! ```text
//! cargo run --example augment_gallery -- [out_dir]
//! ```

use std::path::PathBuf;

use semiseg::augment::{strong_augment, weak_augment, StrongPolicy, WeakPolicy, GENERAL_POOL};
use semiseg::dataset::{generate_synthetic, io, SyntheticKind};
use semiseg::rng::rng_for;

fn main() -> semiseg::Result<()> {
    let out: PathBuf =
        std::env::args().nth(1).map(Into::into).unwrap_or_else(|| "target/augment_gallery".into());
    std::fs::create_dir_all(&out)?;

    let samples = generate_synthetic(SyntheticKind::Blobs, 1, (96, 96), 7)?;
    let image = &samples[0].image;
    io::write_gray_png(image, &out.join("original.png"))?;

    // Every intensity transform at full magnitude.
    for transform in GENERAL_POOL {
        let mut rng = rng_for(1, &[0]);
        let result = transform.apply(image, 30, &mut rng);
        io::write_gray_png(&result, &out.join(format!("{transform:?}.png").to_lowercase()))?;
    }

    // Weak policy: small scale/rotation plus flips.
    let mask = samples[0].diagnostic_mask()?.cloned();
    for seed in 0..3u64 {
        let (weak_img, weak_mask, record) =
            weak_augment(image, mask.as_ref(), &WeakPolicy::default(), seed);
        println!(
            "weak seed {seed}: rotation {:+.1} deg, scale {:.3}, flip {}",
            record.rotation_deg, record.scale, record.hflip
        );
        io::write_gray_png(&weak_img, &out.join(format!("weak_{seed}.png")))?;
        if let Some(m) = weak_mask {
            io::write_mask_png(&m, &out.join(format!("weak_{seed}_mask.png")))?;
        }
    }

    // Strong policy: sampled transform subsets plus a free rotation.
    for seed in 0..3u64 {
        let (strong_img, record) = strong_augment(image, &StrongPolicy::default(), seed);
        println!("strong seed {seed}: recorded rotation {:.1} deg", record.rotation_deg);
        io::write_gray_png(&strong_img, &out.join(format!("strong_{seed}.png")))?;
    }

    println!("\ngallery written to {}", out.display());
    Ok(())
}
