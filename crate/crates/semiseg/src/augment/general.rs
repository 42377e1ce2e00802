//! Intensity-only transforms: they change pixel values, never positions,
//! so predicted masks need no realignment afterwards.
//!
//! Inputs are assumed normalized to [0, 1]; outputs are clamped back into
//! that range. The integer magnitude in [0, 30] maps linearly onto each
//! transform's natural parameter range:
//!
//! * AutoContrast, Invert, Equalize — magnitude-independent.
//! * Solarize — inversion threshold `1 - m/30` (m = 30 inverts everything).
//! * Contrast, Color, Brightness, Sharpness — enhancement factor
//!   `1 ± 0.9 * m/30` with a random sign (PIL-style blend against the
//!   degenerate image). Color on single-channel images is a no-op since
//!   saturation is undefined for grayscale.

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::grid::Image;

pub const MAX_MAGNITUDE: u32 = 30;
const ENHANCE_SPAN: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneralTransform {
    AutoContrast,
    Invert,
    Equalize,
    Solarize,
    Contrast,
    Color,
    Brightness,
    Sharpness,
}

pub const GENERAL_POOL: [GeneralTransform; 8] = [
    GeneralTransform::AutoContrast,
    GeneralTransform::Invert,
    GeneralTransform::Equalize,
    GeneralTransform::Solarize,
    GeneralTransform::Contrast,
    GeneralTransform::Color,
    GeneralTransform::Brightness,
    GeneralTransform::Sharpness,
];

impl GeneralTransform {
    /// Applies the transform at `magnitude`; `rng` supplies the sign of
    /// enhancement factors.
    pub fn apply(&self, image: &Image, magnitude: u32, rng: &mut impl Rng) -> Image {
        let m = magnitude.min(MAX_MAGNITUDE) as f64 / MAX_MAGNITUDE as f64;
        let out = match self {
            GeneralTransform::AutoContrast => auto_contrast(image),
            GeneralTransform::Invert => map_values(image, |v| 1.0 - v),
            GeneralTransform::Equalize => equalize(image),
            GeneralTransform::Solarize => {
                let threshold = 1.0 - m;
                map_values(image, move |v| if v >= threshold { 1.0 - v } else { v })
            }
            GeneralTransform::Contrast => enhance(image, factor(m, rng), Degenerate::MeanGray),
            GeneralTransform::Color => {
                if image.channels() == 1 {
                    image.clone()
                } else {
                    enhance(image, factor(m, rng), Degenerate::Grayscale)
                }
            }
            GeneralTransform::Brightness => enhance(image, factor(m, rng), Degenerate::Black),
            GeneralTransform::Sharpness => enhance(image, factor(m, rng), Degenerate::Smooth),
        };
        clamp01(out)
    }
}

fn factor(m: f64, rng: &mut impl Rng) -> f64 {
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    1.0 + sign * ENHANCE_SPAN * m
}

fn map_values(image: &Image, f: impl Fn(f64) -> f64) -> Image {
    Image { data: image.data.mapv(|v| f(v)) }
}

fn clamp01(mut image: Image) -> Image {
    image.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    image
}

/// Rescales each channel so its minimum maps to 0 and maximum to 1;
/// constant channels pass through unchanged.
fn auto_contrast(image: &Image) -> Image {
    let mut data = image.data.clone();
    for mut plane in data.outer_iter_mut() {
        let min = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            plane.mapv_inplace(|v| (v - min) / (max - min));
        }
    }
    Image { data }
}

/// Histogram equalization over 256 bins, per channel.
fn equalize(image: &Image) -> Image {
    let mut data = image.data.clone();
    for mut plane in data.outer_iter_mut() {
        let mut hist = [0u64; 256];
        for &v in plane.iter() {
            hist[quantize(v)] += 1;
        }
        let total: u64 = hist.iter().sum();
        let step = (total - hist[255]) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (i, slot) in lut.iter_mut().enumerate() {
            *slot = (n / step).min(255) as u8;
            n += hist[i];
        }
        plane.mapv_inplace(|v| lut[quantize(v)] as f64 / 255.0);
    }
    Image { data }
}

fn quantize(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * 255.0).round() as usize).min(255)
}

enum Degenerate {
    Black,
    MeanGray,
    Grayscale,
    Smooth,
}

/// PIL-style enhancement: blend `degenerate + factor * (image - degenerate)`.
fn enhance(image: &Image, factor: f64, kind: Degenerate) -> Image {
    let (ch, h, w) = image.data.dim();
    let degenerate: Array3<f64> = match kind {
        Degenerate::Black => Array3::zeros((ch, h, w)),
        Degenerate::MeanGray => {
            let mean = luma(image).mean().unwrap_or(0.0);
            Array3::from_elem((ch, h, w), mean)
        }
        Degenerate::Grayscale => {
            let gray = luma(image);
            Array3::from_shape_fn((ch, h, w), |(_, r, c)| gray[(r, c)])
        }
        Degenerate::Smooth => {
            let mut out = Array3::zeros((ch, h, w));
            for k in 0..ch {
                let plane = image.data.index_axis(ndarray::Axis(0), k);
                let smoothed = smooth_plane(&plane.to_owned());
                out.index_axis_mut(ndarray::Axis(0), k).assign(&smoothed);
            }
            out
        }
    };
    let data = Array3::from_shape_fn((ch, h, w), |idx| {
        degenerate[idx] + factor * (image.data[idx] - degenerate[idx])
    });
    Image { data }
}

fn luma(image: &Image) -> Array2<f64> {
    let (ch, h, w) = image.data.dim();
    if ch == 1 {
        return image.data.index_axis(ndarray::Axis(0), 0).to_owned();
    }
    Array2::from_shape_fn((h, w), |(r, c)| {
        0.299 * image.data[(0, r, c)] + 0.587 * image.data[(1, r, c)] + 0.114 * image.data[(2, r, c)]
    })
}

/// 3x3 smoothing kernel [[1,1,1],[1,5,1],[1,1,1]]/13; border pixels keep
/// their original value.
fn smooth_plane(plane: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    let mut out = plane.clone();
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let mut acc = 4.0 * plane[(r, c)];
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    acc += plane[((r as i64 + dr) as usize, (c as i64 + dc) as usize)];
                }
            }
            out[(r, c)] = acc / 13.0;
        }
    }
    out
}
