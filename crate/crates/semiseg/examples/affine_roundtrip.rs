//! Demonstrates the invertible-affine alignment: a prediction pushed
//! through a transform and pulled back again, with the round-trip error
//! per record kind.
//!
//! ```text
//! cargo run --example affine_roundtrip
//! ```

use ndarray::Array3;
use semiseg::augment::{apply_prediction, invert_prediction, AffineRecord, Interp};
use semiseg::grid::SoftPrediction;
use semiseg::rng::rng_for;

use rand::Rng;

fn smooth(k: usize, n: usize, seed: u64) -> SoftPrediction {
    let mut rng = rng_for(seed, &[1]);
    let phases: Vec<(f64, f64)> =
        (0..k).map(|_| (rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28))).collect();
    let mut probs = Array3::zeros((k, n, n));
    for r in 0..n {
        for c in 0..n {
            let mut sum = 0.0;
            for (ch, &(pr, pc)) in phases.iter().enumerate() {
                let v = 1.0 + ((r as f64 / 10.0 + pr).sin() * (c as f64 / 10.0 + pc).cos()).abs();
                probs[(ch, r, c)] = v;
                sum += v;
            }
            for ch in 0..k {
                probs[(ch, r, c)] /= sum;
            }
        }
    }
    SoftPrediction::all_valid(probs)
}

fn round_trip_error(pred: &SoftPrediction, record: &AffineRecord) -> (f64, usize) {
    let transformed = apply_prediction(pred, record).expect("valid record");
    let back = invert_prediction(&transformed, record).expect("valid record");
    let mut err = 0.0;
    let mut n = 0;
    for ((ch, r, c), &v) in back.probs.indexed_iter() {
        if back.validity[(r, c)] {
            err += (v - pred.probs[(ch, r, c)]).abs();
            n += 1;
        }
    }
    (err / n as f64, n)
}

fn main() {
    let pred = smooth(3, 64, 9);
    let records = [
        ("identity", AffineRecord::identity()),
        ("rotate 90", AffineRecord::rotation(90.0)),
        ("rotate 270", AffineRecord::rotation(270.0)),
        ("rotate 37", AffineRecord::rotation(37.0)),
        ("rotate 200.5", AffineRecord::rotation(200.5)),
        (
            "scale 1.05 + flip",
            AffineRecord { rotation_deg: 0.0, scale: 1.05, hflip: true, interpolation: Interp::Bilinear },
        ),
        (
            "rotate 123 + scale 0.97",
            AffineRecord { rotation_deg: 123.0, scale: 0.97, hflip: false, interpolation: Interp::Bilinear },
        ),
    ];
    println!("{:<24} {:>14} {:>12}", "record", "mean abs err", "valid px");
    for (name, record) in records {
        let (err, n) = round_trip_error(&pred, &record);
        println!("{name:<24} {err:>14.2e} {n:>12}");
    }
}
