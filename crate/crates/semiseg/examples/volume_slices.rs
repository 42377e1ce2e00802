//! Builds a synthetic 3D volume with a layered label field, saves it in the
//! raw + header format, reloads it, and slices it at random orientations.
//!
//! ```text
//! cargo run --example volume_slices -- [out_dir]
//! ```

use std::path::PathBuf;

use ndarray::Array3;
use semiseg::dataset::volume::{
    read_label_volume, read_volume, slice_volume, write_label_volume, write_volume,
};
use semiseg::dataset::io;

fn main() -> semiseg::Result<()> {
    let out: PathBuf =
        std::env::args().nth(1).map(Into::into).unwrap_or_else(|| "target/volume_demo".into());
    std::fs::create_dir_all(&out)?;

    // Concentric-shell volume: intensity falls off with radius, labels
    // follow three radial bands.
    let n = 48;
    let center = (n as f64 - 1.0) / 2.0;
    let volume = Array3::from_shape_fn((n, n, n), |(z, y, x)| {
        let r = ((z as f64 - center).powi(2)
            + (y as f64 - center).powi(2)
            + (x as f64 - center).powi(2))
        .sqrt();
        (1.0 - r / (n as f64)).max(0.0)
    });
    let labels = Array3::from_shape_fn((n, n, n), |(z, y, x)| {
        let r = ((z as f64 - center).powi(2)
            + (y as f64 - center).powi(2)
            + (x as f64 - center).powi(2))
        .sqrt();
        match r as usize / 8 {
            0 => 3u8,
            1 => 2,
            2 => 1,
            _ => 0,
        }
    });

    write_volume(&volume, &out.join("scan"))?;
    write_label_volume(&labels, &out.join("labels"))?;
    let volume = read_volume(&out.join("scan"))?;
    let labels = read_label_volume(&out.join("labels"))?;

    let slices = slice_volume(&volume, Some(&labels), 6, 4, (24, 24))?;
    for s in &slices {
        io::write_gray_png(&s.image, &out.join(format!("{}.png", s.id)))?;
        if let Some(mask) = s.diagnostic_mask()? {
            io::write_mask_png(mask, &out.join(format!("{}_labels.png", s.id)))?;
            let classes: std::collections::BTreeSet<u8> = mask.data.iter().copied().collect();
            println!("{}: classes {:?}", s.id, classes);
        }
    }
    println!("\nwrote volume + {} slices to {}", slices.len(), out.display());
    Ok(())
}
