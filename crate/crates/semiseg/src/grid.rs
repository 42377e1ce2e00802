//! Dense 2D grid types shared across the crate.
//!
//! Layout convention: images and probability maps are channel-major
//! `(channels, height, width)`; masks are `(height, width)` with `u8` class
//! ids. Class id 0 is the background by convention.

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};

/// A 2D image with one or three real-valued channels, `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let c = data.shape()[0];
        if c != 1 && c != 3 {
            return Err(Error::Shape(format!("image must have 1 or 3 channels, got {c}")));
        }
        Ok(Self { data })
    }

    pub fn from_gray(plane: Array2<f64>) -> Self {
        let (h, w) = plane.dim();
        Self { data: plane.into_shape_with_order((1, h, w)).expect("reshape") }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn same_size_as(&self, other: &Image) -> bool {
        self.data.dim() == other.data.dim()
    }
}

/// A hard per-pixel class mask, `(H, W)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub data: Array2<u8>,
}

impl Mask {
    pub fn new(data: Array2<u8>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    /// Largest class id present, or None for an empty mask.
    pub fn max_class(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }

    /// Checks every class id is `< class_count`.
    pub fn check_classes(&self, class_count: usize) -> Result<()> {
        if let Some(m) = self.max_class() {
            if (m as usize) >= class_count {
                return Err(Error::Data(format!(
                    "mask contains class id {m} but class count is {class_count}"
                )));
            }
        }
        Ok(())
    }

    pub fn count_class(&self, class_id: u8) -> usize {
        self.data.iter().filter(|&&v| v == class_id).count()
    }
}

/// Per-pixel class probabilities `(K, H, W)` plus a validity mask marking
/// pixels that carry genuine content (losses ignore invalid pixels).
#[derive(Debug, Clone)]
pub struct SoftPrediction {
    pub probs: Array3<f64>,
    pub validity: Array2<bool>,
}

impl SoftPrediction {
    pub fn new(probs: Array3<f64>, validity: Array2<bool>) -> Result<Self> {
        let (_, h, w) = probs.dim();
        if validity.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "validity {:?} does not match probs spatial size ({h}, {w})",
                validity.dim()
            )));
        }
        Ok(Self { probs, validity })
    }

    /// Wraps a probability map with an all-valid mask.
    pub fn all_valid(probs: Array3<f64>) -> Self {
        let (_, h, w) = probs.dim();
        Self { probs, validity: Array2::from_elem((h, w), true) }
    }

    /// One-hot encoding of a hard mask.
    pub fn one_hot(mask: &Mask, n_classes: usize) -> Self {
        let (h, w) = mask.data.dim();
        let mut probs = Array3::zeros((n_classes, h, w));
        for ((r, c), &v) in mask.data.indexed_iter() {
            probs[(v as usize, r, c)] = 1.0;
        }
        Self::all_valid(probs)
    }

    pub fn n_classes(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.probs.shape()[2]
    }

    pub fn n_valid(&self) -> usize {
        self.validity.iter().filter(|&&v| v).count()
    }

    /// Per-pixel argmax as a hard mask.
    pub fn argmax_mask(&self) -> Mask {
        let (k, h, w) = self.probs.dim();
        let mut out = Array2::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let mut best = 0usize;
                let mut best_p = self.probs[(0, r, c)];
                for ch in 1..k {
                    let p = self.probs[(ch, r, c)];
                    if p > best_p {
                        best_p = p;
                        best = ch;
                    }
                }
                out[(r, c)] = best as u8;
            }
        }
        Mask::new(out)
    }

    /// Mean class distribution over valid pixels (the prediction marginal).
    pub fn marginal(&self) -> Vec<f64> {
        let k = self.n_classes();
        let mut acc = vec![0.0; k];
        let mut n = 0usize;
        for r in 0..self.height() {
            for c in 0..self.width() {
                if self.validity[(r, c)] {
                    for ch in 0..k {
                        acc[ch] += self.probs[(ch, r, c)];
                    }
                    n += 1;
                }
            }
        }
        if n > 0 {
            for a in acc.iter_mut() {
                *a /= n as f64;
            }
        }
        acc
    }

    /// Largest per-pixel deviation of the probability sum from 1 on valid pixels.
    pub fn max_sum_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.height() {
            for c in 0..self.width() {
                if self.validity[(r, c)] {
                    let s: f64 = self.probs.index_axis(Axis(1), r).index_axis(Axis(1), c).sum();
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
        worst
    }
}

/// Entropy of a discrete distribution, in nats.
pub fn entropy(dist: &[f64]) -> f64 {
    dist.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}
