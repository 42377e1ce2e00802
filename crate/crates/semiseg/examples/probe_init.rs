//! Prints activation statistics of an untrained network.

use semiseg::dataset::{generate_synthetic, SyntheticKind};
use semiseg::grid::entropy;
use semiseg::model::{UNet, UNetArch};

fn main() -> semiseg::Result<()> {
    let samples = generate_synthetic(SyntheticKind::TwoIntensity, 2, (64, 64), 1)?;
    for base in [2, 4, 8] {
        let net = UNet::new(UNetArch::new(1, base, 2).with_aux(4), 11);
        let (main, _) = net.predict(&samples[0].image)?;
        let marginal = main.marginal();
        // Mean per-pixel entropy: low means saturated softmax.
        let (k, h, w) = main.probs.dim();
        let mut mean_pixel_entropy = 0.0;
        for r in 0..h {
            for c in 0..w {
                let dist: Vec<f64> = (0..k).map(|ch| main.probs[(ch, r, c)]).collect();
                mean_pixel_entropy += entropy(&dist);
            }
        }
        mean_pixel_entropy /= (h * w) as f64;
        println!(
            "base {base}: marginal {marginal:?} (entropy {:.4}), mean pixel entropy {:.4} (ln 2 = {:.4})",
            entropy(&marginal),
            mean_pixel_entropy,
            (2.0f64).ln()
        );
    }
    Ok(())
}
