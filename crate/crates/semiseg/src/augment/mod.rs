//! Weak and strong augmentation policies.
//!
//! Weak augmentation applies a mild invertible spatial transform to an image
//! (and its mask, when present). Strong augmentation samples a random policy
//! of intensity transforms plus an unconstrained rotation whose parameters
//! are captured in an [`AffineRecord`], so predictions made on the augmented
//! image can be realigned exactly.

pub mod affine;
pub mod general;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use affine::{
    apply_image, apply_mask, apply_prediction, conjugate_by_weak, invert_prediction,
    invert_prediction_cached, resample_backward, AffineRecord, Interp, ResampleCache,
};
pub use general::{GeneralTransform, GENERAL_POOL, MAX_MAGNITUDE};

use crate::grid::{Image, Mask};
use crate::rng::rng_for;

/// Mild spatial transforms applied to both streams.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WeakPolicy {
    pub scale_range: (f64, f64),
    pub rot_range_deg: (f64, f64),
    pub flip_prob: f64,
}

impl Default for WeakPolicy {
    fn default() -> Self {
        Self { scale_range: (0.95, 1.05), rot_range_deg: (-15.0, 15.0), flip_prob: 0.5 }
    }
}

impl WeakPolicy {
    /// Fixed identity policy, useful for forcing deterministic tests.
    pub fn identity() -> Self {
        Self { scale_range: (1.0, 1.0), rot_range_deg: (0.0, 0.0), flip_prob: 0.0 }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> AffineRecord {
        let scale = if self.scale_range.0 == self.scale_range.1 {
            self.scale_range.0
        } else {
            rng.gen_range(self.scale_range.0..self.scale_range.1)
        };
        let rotation_deg = if self.rot_range_deg.0 == self.rot_range_deg.1 {
            self.rot_range_deg.0
        } else {
            rng.gen_range(self.rot_range_deg.0..self.rot_range_deg.1)
        };
        let hflip = rng.gen_bool(self.flip_prob);
        AffineRecord { rotation_deg, scale, hflip, interpolation: Interp::Bilinear }
    }
}

/// Random subset of strong transforms: `n_ops` draws (with replacement) from
/// the pool of eight intensity transforms plus rotation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StrongPolicy {
    pub n_ops: usize,
    pub magnitude: u32,
}

impl Default for StrongPolicy {
    fn default() -> Self {
        Self { n_ops: 2, magnitude: 30 }
    }
}

/// One entry of the strong op pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrongOp {
    General(GeneralTransform),
    Rotate,
}

pub const STRONG_POOL_SIZE: usize = GENERAL_POOL.len() + 1;

fn sample_strong_ops(policy: &StrongPolicy, rng: &mut impl Rng) -> Vec<StrongOp> {
    let mut pool: Vec<StrongOp> = GENERAL_POOL.iter().copied().map(StrongOp::General).collect();
    pool.push(StrongOp::Rotate);
    (0..policy.n_ops.max(1)).map(|_| *pool.choose(rng).expect("non-empty pool")).collect()
}

/// Applies a weak transform to an image and (optionally) its mask, returning
/// the transform record. Output size is preserved; out-of-canvas pixels are
/// zero in the image and background in the mask.
pub fn weak_augment(
    image: &Image,
    mask: Option<&Mask>,
    policy: &WeakPolicy,
    seed: u64,
) -> (Image, Option<Mask>, AffineRecord) {
    let mut rng = rng_for(seed, &[crate::rng::stream::WEAK]);
    let record = policy.sample(&mut rng);
    weak_apply(image, mask, &record)
}

/// Applies an already-sampled weak record; used when two images must share
/// one transform.
pub fn weak_apply(
    image: &Image,
    mask: Option<&Mask>,
    record: &AffineRecord,
) -> (Image, Option<Mask>, AffineRecord) {
    let out_image = apply_image(image, record).expect("weak record has positive scale");
    let out_mask = mask.map(|m| apply_mask(m, record).expect("weak record has positive scale"));
    (out_image, out_mask, *record)
}

/// Applies a sampled strong policy: intensity transforms first, then the
/// rotation captured in the returned record. When the policy draws no
/// rotation the record is the identity.
pub fn strong_augment(image: &Image, policy: &StrongPolicy, seed: u64) -> (Image, AffineRecord) {
    let mut rng = rng_for(seed, &[crate::rng::stream::STRONG]);
    let ops = sample_strong_ops(policy, &mut rng);

    let mut out = image.clone();
    let mut rotation_deg = 0.0f64;
    for op in ops {
        match op {
            StrongOp::General(t) => {
                out = t.apply(&out, policy.magnitude, &mut rng);
            }
            StrongOp::Rotate => {
                rotation_deg += rng.gen_range(0.0..360.0);
            }
        }
    }
    let record = AffineRecord::rotation(rotation_deg.rem_euclid(360.0));
    if !record.is_identity() {
        out = apply_image(&out, &record).expect("rotation record is valid");
    }
    (out, record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    fn test_image(seed: u64) -> Image {
        let mut rng = rng_for(seed, &[42]);
        Image { data: Array3::from_shape_fn((1, 16, 16), |_| rng.gen_range(0.0..1.0)) }
    }

    #[test]
    fn identity_policy_returns_input() {
        let img = test_image(1);
        let mask = Mask::new(Array2::from_elem((16, 16), 1u8));
        let (out_img, out_mask, record) =
            weak_augment(&img, Some(&mask), &WeakPolicy::identity(), 123);
        assert_eq!(out_img.data, img.data);
        assert_eq!(out_mask.unwrap(), mask);
        assert!(record.is_identity());
    }

    #[test]
    fn weak_augment_is_deterministic_per_seed() {
        let img = test_image(2);
        let (a, _, ra) = weak_augment(&img, None, &WeakPolicy::default(), 7);
        let (b, _, rb) = weak_augment(&img, None, &WeakPolicy::default(), 7);
        assert_eq!(a.data, b.data);
        assert_eq!(ra, rb);
        let (_, _, rc) = weak_augment(&img, None, &WeakPolicy::default(), 8);
        assert_ne!(ra, rc);
    }

    #[test]
    fn single_pixel_mask_survives_rotation() {
        // Brute-force count of foreground pixels under nearest-neighbor
        // rotation: a single pixel maps to at most a couple of cells.
        let mut mask_data = Array2::zeros((32, 32));
        mask_data[(16, 16)] = 1u8;
        let mask = Mask::new(mask_data);
        let record = AffineRecord::rotation(15.0);
        let rotated = apply_mask(&mask, &record).unwrap();
        let count = rotated.count_class(1) as i64;
        assert!((count - 1).abs() <= 1, "count {count}");
    }

    #[test]
    fn strong_policy_draws_exactly_n_ops() {
        let policy = StrongPolicy { n_ops: 3, magnitude: 10 };
        let mut rng = rng_for(3, &[1]);
        for _ in 0..50 {
            assert_eq!(sample_strong_ops(&policy, &mut rng).len(), 3);
        }
    }

    #[test]
    fn strong_ops_cover_the_whole_pool() {
        let policy = StrongPolicy { n_ops: 1, magnitude: 30 };
        let mut rng = rng_for(4, &[1]);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2000 {
            for op in sample_strong_ops(&policy, &mut rng) {
                seen.insert(format!("{op:?}"));
            }
        }
        assert_eq!(seen.len(), STRONG_POOL_SIZE);
    }

    #[test]
    fn strong_augment_records_rotation() {
        let img = test_image(5);
        for seed in 0..200u64 {
            let (_, record) = strong_augment(&img, &StrongPolicy::default(), seed);
            assert!(!record.hflip);
            assert_eq!(record.scale, 1.0);
            assert!((0.0..360.0).contains(&record.rotation_deg));
        }
    }

    #[test]
    fn flip_frequency_and_rotation_distribution() {
        let policy = WeakPolicy::default();
        let mut rng = rng_for(6, &[1]);
        let n = 10_000;
        let mut flips = 0usize;
        let mut rotations: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            let r = policy.sample(&mut rng);
            if r.hflip {
                flips += 1;
            }
            rotations.push(r.rotation_deg);
            assert!((0.95..=1.05).contains(&r.scale));
            assert!((-15.0..=15.0).contains(&r.rotation_deg));
        }
        let freq = flips as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "flip frequency {freq}");

        // Kolmogorov-Smirnov sanity check against Uniform(-15, 15).
        rotations.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks = 0.0f64;
        for (i, &r) in rotations.iter().enumerate() {
            let cdf = (r + 15.0) / 30.0;
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            ks = ks.max((cdf - emp_lo).abs().max((emp_hi - cdf).abs()));
        }
        // 1% critical value for n = 10000 is ~0.0163.
        assert!(ks < 0.0163, "KS statistic {ks}");
    }
}
