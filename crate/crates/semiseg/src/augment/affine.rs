//! Invertible spatial transforms about the image center.
//!
//! An [`AffineRecord`] stores rotation, isotropic scale, and horizontal flip.
//! Applying a record resamples through the pull-back map (output pixel reads
//! from the inverse-mapped source position); inverting a prediction samples
//! through the forward map, which realigns it with the untransformed frame.
//! Pixels whose source position leaves the canvas are padded (zero for
//! images, background for masks) and flagged invalid so losses skip them.
//!
//! Multiples of 90 degrees use exact trigonometric values, and sampling
//! positions within 1e-9 of a pixel center are snapped, so axis-aligned
//! rotations without scaling round-trip bit-exactly.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask, SoftPrediction};

const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Parameters of a spatial transform, sufficient to apply its exact inverse.
///
/// Composition order: horizontal flip, then scale, then rotation, all about
/// the image center. Intensity transforms never appear here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineRecord {
    pub rotation_deg: f64,
    pub scale: f64,
    pub hflip: bool,
    /// Resampling mode for image payloads; masks always use nearest.
    pub interpolation: Interp,
}

impl AffineRecord {
    pub fn identity() -> Self {
        Self { rotation_deg: 0.0, scale: 1.0, hflip: false, interpolation: Interp::Bilinear }
    }

    pub fn rotation(deg: f64) -> Self {
        Self { rotation_deg: deg, ..Self::identity() }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.scale == 1.0 && !self.hflip
    }

    fn check_scale(&self) -> Result<()> {
        if self.scale <= 0.0 {
            return Err(Error::Data(format!("affine scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    /// Where input point `(x, y)` lands in the output frame.
    pub fn map_forward(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        let (cx, cy) = center(h, w);
        let (mut dx, dy) = (x - cx, y - cy);
        if self.hflip {
            dx = -dx;
        }
        let (cos, sin) = exact_cos_sin(self.rotation_deg);
        let (sx, sy) = (self.scale * dx, self.scale * dy);
        (cx + cos * sx - sin * sy, cy + sin * sx + cos * sy)
    }

    /// Source position in the input frame for output point `(x, y)`.
    pub fn map_inverse(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        let (cx, cy) = center(h, w);
        let (dx, dy) = (x - cx, y - cy);
        let (cos, sin) = exact_cos_sin(-self.rotation_deg);
        let (mut rx, ry) = ((cos * dx - sin * dy) / self.scale, (sin * dx + cos * dy) / self.scale);
        if self.hflip {
            rx = -rx;
        }
        (cx + rx, cy + ry)
    }

    /// Validity mask of the transformed canvas: true where the source
    /// position stayed inside the original image.
    pub fn valid_after_apply(&self, h: usize, w: usize) -> Array2<bool> {
        Array2::from_shape_fn((h, w), |(r, c)| {
            let (x, y) = self.map_inverse(c as f64, r as f64, h, w);
            in_bounds(x, y, h, w)
        })
    }
}

fn center(h: usize, w: usize) -> (f64, f64) {
    ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
}

/// Cosine/sine with exact values at multiples of 90 degrees.
fn exact_cos_sin(deg: f64) -> (f64, f64) {
    let norm = deg.rem_euclid(360.0);
    if norm % 90.0 == 0.0 {
        match norm as i64 {
            0 => (1.0, 0.0),
            90 => (0.0, 1.0),
            180 => (-1.0, 0.0),
            270 => (0.0, -1.0),
            _ => unreachable!(),
        }
    } else {
        let r = deg.to_radians();
        (r.cos(), r.sin())
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

fn in_bounds(x: f64, y: f64, h: usize, w: usize) -> bool {
    let (x, y) = (snap(x), snap(y));
    x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
}

/// Up to four (row, col, weight) taps of a bilinear read at `(x, y)`.
/// Returns None when the position is outside the canvas.
fn bilinear_taps(x: f64, y: f64, h: usize, w: usize) -> Option<[(usize, usize, f64); 4]> {
    let (x, y) = (snap(x), snap(y));
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (c0, r0) = (x0 as usize, y0 as usize);
    let c1 = if fx > 0.0 { c0 + 1 } else { c0 };
    let r1 = if fy > 0.0 { r0 + 1 } else { r0 };
    Some([
        (r0, c0, (1.0 - fy) * (1.0 - fx)),
        (r0, c1, (1.0 - fy) * fx),
        (r1, c0, fy * (1.0 - fx)),
        (r1, c1, fy * fx),
    ])
}

fn sample_plane(plane: ArrayView2<'_, f64>, x: f64, y: f64, interp: Interp) -> Option<f64> {
    let (h, w) = plane.dim();
    match interp {
        Interp::Bilinear => bilinear_taps(x, y, h, w)
            .map(|taps| taps.iter().map(|&(r, c, wt)| wt * plane[(r, c)]).sum()),
        Interp::Nearest => {
            if in_bounds(x, y, h, w) {
                Some(plane[(y.round() as usize, x.round() as usize)])
            } else {
                None
            }
        }
    }
}

/// Applies the record to an image; out-of-canvas pixels become 0.
pub fn apply_image(image: &Image, record: &AffineRecord) -> Result<Image> {
    record.check_scale()?;
    if record.is_identity() {
        return Ok(image.clone());
    }
    let (ch, h, w) = image.data.dim();
    let mut out = Array3::zeros((ch, h, w));
    for r in 0..h {
        for c in 0..w {
            let (x, y) = record.map_inverse(c as f64, r as f64, h, w);
            for k in 0..ch {
                if let Some(v) =
                    sample_plane(image.data.index_axis(ndarray::Axis(0), k), x, y, record.interpolation)
                {
                    out[(k, r, c)] = v;
                }
            }
        }
    }
    Image::new(out)
}

/// Applies the record to a hard mask with nearest-neighbor sampling;
/// out-of-canvas pixels become background (0).
pub fn apply_mask(mask: &Mask, record: &AffineRecord) -> Result<Mask> {
    record.check_scale()?;
    if record.is_identity() {
        return Ok(mask.clone());
    }
    let (h, w) = mask.data.dim();
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let (x, y) = record.map_inverse(c as f64, r as f64, h, w);
            if in_bounds(x, y, h, w) {
                out[(r, c)] = mask.data[(y.round() as usize, x.round() as usize)];
            }
        }
    }
    Ok(Mask::new(out))
}

/// One bilinear read feeding an output pixel of a prediction resample.
struct ResampleTap {
    out_r: usize,
    out_c: usize,
    taps: [(usize, usize, f64); 4],
    raw_sum: f64,
    /// False when a single full-weight tap copied the pixel verbatim
    /// (no renormalization, so exact for axis-aligned moves).
    renorm: bool,
}

/// Everything needed to push gradients back through a prediction resample.
pub struct ResampleCache {
    jobs: Vec<ResampleTap>,
    in_dim: (usize, usize, usize),
}

fn resample_prediction(
    pred: &SoftPrediction,
    source_of: impl Fn(f64, f64) -> (f64, f64),
    want_cache: bool,
) -> (SoftPrediction, Option<ResampleCache>) {
    let (k, h, w) = pred.probs.dim();
    let uniform = 1.0 / k as f64;
    let mut probs = Array3::from_elem((k, h, w), uniform);
    let mut validity = Array2::from_elem((h, w), false);
    let mut jobs = Vec::new();
    let mut raw = vec![0.0; k];
    for r in 0..h {
        for c in 0..w {
            let (x, y) = source_of(c as f64, r as f64);
            let Some(taps) = bilinear_taps(x, y, h, w) else { continue };
            // Valid only if every contributing source pixel is itself valid.
            if taps.iter().any(|&(tr, tc, wt)| wt > 0.0 && !pred.validity[(tr, tc)]) {
                continue;
            }
            let exact = taps[0].2 == 1.0;
            raw.fill(0.0);
            if exact {
                let (tr, tc, _) = taps[0];
                for (ch, slot) in raw.iter_mut().enumerate() {
                    *slot = pred.probs[(ch, tr, tc)];
                }
            } else {
                for &(tr, tc, wt) in &taps {
                    if wt == 0.0 {
                        continue;
                    }
                    for (ch, slot) in raw.iter_mut().enumerate() {
                        *slot += wt * pred.probs[(ch, tr, tc)];
                    }
                }
            }
            let sum: f64 = raw.iter().sum();
            if sum <= 0.0 {
                continue;
            }
            for ch in 0..k {
                probs[(ch, r, c)] = if exact { raw[ch] } else { raw[ch] / sum };
            }
            validity[(r, c)] = true;
            if want_cache {
                jobs.push(ResampleTap { out_r: r, out_c: c, taps, raw_sum: sum, renorm: !exact });
            }
        }
    }
    let out = SoftPrediction { probs, validity };
    let cache = want_cache.then(|| ResampleCache { jobs, in_dim: (k, h, w) });
    (out, cache)
}

/// Resamples a prediction through the exact inverse spatial map, bringing a
/// prediction made on a transformed image back into the original frame.
/// Class distributions are renormalized per pixel; pixels that left the
/// canvas are marked invalid.
pub fn invert_prediction(pred: &SoftPrediction, record: &AffineRecord) -> Result<SoftPrediction> {
    record.check_scale()?;
    if record.is_identity() {
        return Ok(pred.clone());
    }
    let (_, h, w) = pred.probs.dim();
    Ok(resample_prediction(pred, |x, y| record.map_forward(x, y, h, w), false).0)
}

/// As [`invert_prediction`], keeping the tap structure for backpropagation.
pub fn invert_prediction_cached(
    pred: &SoftPrediction,
    record: &AffineRecord,
) -> Result<(SoftPrediction, ResampleCache)> {
    record.check_scale()?;
    let (_, h, w) = pred.probs.dim();
    let (out, cache) =
        resample_prediction(pred, |x, y| record.map_forward(x, y, h, w), true);
    Ok((out, cache.expect("cache requested")))
}

/// Applies the record to a prediction (forward transform), the counterpart
/// of [`invert_prediction`] used in round-trip checks.
pub fn apply_prediction(pred: &SoftPrediction, record: &AffineRecord) -> Result<SoftPrediction> {
    record.check_scale()?;
    if record.is_identity() {
        return Ok(pred.clone());
    }
    let (_, h, w) = pred.probs.dim();
    Ok(resample_prediction(pred, |x, y| record.map_inverse(x, y, h, w), false).0)
}

/// Pushes `grad_out` (gradient on the resampled prediction) back onto the
/// input prediction, through renormalization and the bilinear taps.
pub fn resample_backward(
    cache: &ResampleCache,
    out: &SoftPrediction,
    grad_out: &Array3<f64>,
) -> Array3<f64> {
    let (k, h, w) = cache.in_dim;
    let mut grad_in = Array3::zeros((k, h, w));
    for job in &cache.jobs {
        let (r, c) = (job.out_r, job.out_c);
        // Renormalization backward: y = raw / S with S the raw channel sum.
        let mut dot = 0.0;
        if job.renorm {
            for ch in 0..k {
                dot += grad_out[(ch, r, c)] * out.probs[(ch, r, c)];
            }
        }
        for ch in 0..k {
            let g_raw = if job.renorm {
                (grad_out[(ch, r, c)] - dot) / job.raw_sum
            } else {
                grad_out[(ch, r, c)]
            };
            for &(tr, tc, wt) in &job.taps {
                if wt != 0.0 {
                    grad_in[(ch, tr, tc)] += wt * g_raw;
                }
            }
        }
    }
    grad_in
}

/// Alignment record bringing the prediction of `weak(strong(x))` into the
/// frame of `weak(x)`: conjugating a center rotation by a center similarity
/// leaves a rotation whose sign follows the flip.
pub fn conjugate_by_weak(strong: &AffineRecord, weak: &AffineRecord) -> AffineRecord {
    debug_assert!(!strong.hflip, "strong policies never flip");
    AffineRecord {
        rotation_deg: if weak.hflip { -strong.rotation_deg } else { strong.rotation_deg },
        scale: strong.scale,
        hflip: false,
        interpolation: Interp::Bilinear,
    }
}
