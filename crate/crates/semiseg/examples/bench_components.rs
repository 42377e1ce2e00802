//! Rough timing of the training hot path, per component.

use std::time::Instant;

use semiseg::augment::{invert_prediction_cached, strong_augment, AffineRecord, StrongPolicy};
use semiseg::dataset::{generate_synthetic, SyntheticKind};
use semiseg::grid::SoftPrediction;
use semiseg::losses;
use semiseg::model::{UNet, UNetArch};

fn main() {
    let samples = generate_synthetic(SyntheticKind::Blobs, 4, (128, 128), 1).unwrap();
    let image = &samples[0].image;
    let mask = samples[0].mask.as_ref().unwrap();

    for base in [4, 8] {
        let mut net = UNet::new(UNetArch::new(1, base, 2), 1);
        let n = 10;

        let t = Instant::now();
        let mut fwd = None;
        for _ in 0..n {
            fwd = Some(net.forward(image).unwrap());
        }
        let fwd_ms = t.elapsed().as_millis() as f64 / n as f64;
        let fwd = fwd.unwrap();

        let pred = SoftPrediction::all_valid(fwd.main.clone());
        let (_, g) = losses::dice_loss_grad(&pred, mask).unwrap();
        let t = Instant::now();
        for _ in 0..n {
            net.backward(&fwd, &g, None);
        }
        let bwd_ms = t.elapsed().as_millis() as f64 / n as f64;

        let t = Instant::now();
        for i in 0..n {
            let _ = strong_augment(image, &StrongPolicy::default(), i as u64);
        }
        let strong_ms = t.elapsed().as_millis() as f64 / n as f64;

        let rec = AffineRecord::rotation(37.0);
        let t = Instant::now();
        for _ in 0..n {
            let _ = invert_prediction_cached(&pred, &rec).unwrap();
        }
        let invert_ms = t.elapsed().as_millis() as f64 / n as f64;

        let t = Instant::now();
        for _ in 0..n {
            let _ = losses::iic_loss_grad(&pred, &pred).unwrap();
        }
        let iic_ms = t.elapsed().as_millis() as f64 / n as f64;

        println!(
            "base {base}: forward {fwd_ms:.1} ms, backward {bwd_ms:.1} ms, strong {strong_ms:.1} ms, invert {invert_ms:.1} ms, iic {iic_ms:.1} ms"
        );
    }
}
