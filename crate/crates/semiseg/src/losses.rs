//! Training losses: Dice (supervised), per-pixel KL consistency, and the
//! dense mutual-information clustering loss, each with analytic gradients
//! with respect to the input probability maps.
//!
//! All three reduce over the validity mask only, in fixed row-major pixel
//! order, so repeated evaluation is bit-reproducible.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::grid::{Mask, SoftPrediction};

/// Smoothing term in the Dice denominator/numerator.
pub const DICE_SMOOTH: f64 = 1.0;
/// Lower clamp applied inside logarithms.
pub const LOG_CLAMP: f64 = 1e-8;

/// A scalar loss plus the number of pixels that contributed to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub n_pixels: usize,
}

impl LossValue {
    pub fn new(value: f64, n_pixels: usize) -> Self {
        Self { value, n_pixels }
    }
}

/// `supervised + weight * unsupervised`.
pub fn combine(supervised: &LossValue, unsupervised: &LossValue, weight: f64) -> LossValue {
    LossValue {
        value: supervised.value + weight * unsupervised.value,
        n_pixels: supervised.n_pixels + unsupervised.n_pixels,
    }
}

fn check_spatial(pred: &SoftPrediction, h: usize, w: usize) -> Result<()> {
    if pred.height() != h || pred.width() != w {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, expected {h}x{w}",
            pred.height(),
            pred.width()
        )));
    }
    Ok(())
}

/// Soft Dice loss against a hard mask, averaged over foreground classes.
///
/// `1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)` per foreground class,
/// computed on valid pixels only.
pub fn dice_loss(pred: &SoftPrediction, target: &Mask) -> Result<LossValue> {
    dice_loss_impl(pred, target, false).map(|(v, _)| v)
}

/// Dice loss plus its gradient with respect to `pred.probs`.
pub fn dice_loss_grad(pred: &SoftPrediction, target: &Mask) -> Result<(LossValue, Array3<f64>)> {
    let (v, g) = dice_loss_impl(pred, target, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn dice_loss_impl(
    pred: &SoftPrediction,
    target: &Mask,
    want_grad: bool,
) -> Result<(LossValue, Option<Array3<f64>>)> {
    let (h, w) = (target.height(), target.width());
    check_spatial(pred, h, w)?;
    let k = pred.n_classes();
    target.check_classes(k)?;

    let n_valid = pred.n_valid();
    if n_valid == 0 {
        return Err(Error::Data("no valid pixels".into()));
    }

    // Per foreground class: intersection, prediction mass, target mass.
    let n_fg = k - 1;
    let mut inter = vec![0.0; k];
    let mut p_sum = vec![0.0; k];
    let mut t_sum = vec![0.0; k];
    for r in 0..h {
        for c in 0..w {
            if !pred.validity[(r, c)] {
                continue;
            }
            let t = target.data[(r, c)] as usize;
            for ch in 1..k {
                let p = pred.probs[(ch, r, c)];
                p_sum[ch] += p;
                if t == ch {
                    inter[ch] += p;
                    t_sum[ch] += 1.0;
                }
            }
        }
    }

    let mut dice_mean = 0.0;
    let mut denom = vec![0.0; k];
    for ch in 1..k {
        denom[ch] = p_sum[ch] + t_sum[ch] + DICE_SMOOTH;
        dice_mean += (2.0 * inter[ch] + DICE_SMOOTH) / denom[ch];
    }
    dice_mean /= n_fg as f64;
    let value = 1.0 - dice_mean;

    let grad = if want_grad {
        let mut g = Array3::zeros((k, h, w));
        for r in 0..h {
            for c in 0..w {
                if !pred.validity[(r, c)] {
                    continue;
                }
                let t = target.data[(r, c)] as usize;
                for ch in 1..k {
                    let t_ch = if t == ch { 1.0 } else { 0.0 };
                    let num = 2.0 * inter[ch] + DICE_SMOOTH;
                    let d_dice = (2.0 * t_ch * denom[ch] - num) / (denom[ch] * denom[ch]);
                    g[(ch, r, c)] = -d_dice / n_fg as f64;
                }
            }
        }
        Some(g)
    } else {
        None
    };

    Ok((LossValue::new(value, n_valid), grad))
}

/// Per-pixel KL divergence `KL(target || student)`, averaged over the
/// intersection of the two validity masks. The target is treated as a
/// constant; the gradient is with respect to the student only.
pub fn kl_consistency(target: &SoftPrediction, student: &SoftPrediction) -> Result<LossValue> {
    kl_impl(target, student, false).map(|(v, _)| v)
}

/// KL consistency plus its gradient with respect to `student.probs`.
pub fn kl_consistency_grad(
    target: &SoftPrediction,
    student: &SoftPrediction,
) -> Result<(LossValue, Array3<f64>)> {
    let (v, g) = kl_impl(target, student, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn joint_validity(a: &SoftPrediction, b: &SoftPrediction) -> Result<(Array2<bool>, usize)> {
    let (h, w) = (a.height(), a.width());
    check_spatial(b, h, w)?;
    let valid = Array2::from_shape_fn((h, w), |idx| a.validity[idx] && b.validity[idx]);
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::Data("empty validity intersection".into()));
    }
    Ok((valid, n))
}

fn kl_impl(
    target: &SoftPrediction,
    student: &SoftPrediction,
    want_grad: bool,
) -> Result<(LossValue, Option<Array3<f64>>)> {
    if target.n_classes() != student.n_classes() {
        return Err(Error::Shape(format!(
            "class count mismatch: {} vs {}",
            target.n_classes(),
            student.n_classes()
        )));
    }
    let (valid, n) = joint_validity(target, student)?;
    let (k, h, w) = target.probs.dim();

    let mut total = 0.0;
    let mut grad = want_grad.then(|| Array3::zeros((k, h, w)));
    for r in 0..h {
        for c in 0..w {
            if !valid[(r, c)] {
                continue;
            }
            for ch in 0..k {
                let t = target.probs[(ch, r, c)];
                if t <= 0.0 {
                    continue;
                }
                let s = student.probs[(ch, r, c)];
                let s_clamped = s.max(LOG_CLAMP);
                total += t * (t / s_clamped).ln();
                if let Some(g) = grad.as_mut() {
                    if s > LOG_CLAMP {
                        g[(ch, r, c)] = -(t / s) / n as f64;
                    }
                }
            }
        }
    }
    Ok((LossValue::new(total / n as f64, n), grad))
}

/// Negative mutual information between two per-pixel class distributions,
/// computed from the symmetrized joint matrix over matched valid pixels.
///
/// The value lies in `[-ln K, 0]`; minimizing it maximizes the mutual
/// information. Differentiable in both inputs.
pub fn iic_loss(pred_a: &SoftPrediction, pred_b: &SoftPrediction) -> Result<LossValue> {
    iic_impl(pred_a, pred_b, 0, false).map(|(v, _)| v)
}

/// Mutual-information loss plus gradients with respect to both inputs.
pub fn iic_loss_grad(
    pred_a: &SoftPrediction,
    pred_b: &SoftPrediction,
) -> Result<(LossValue, Array3<f64>, Array3<f64>)> {
    let (v, g) = iic_impl(pred_a, pred_b, 0, true)?;
    let (ga, gb) = g.expect("gradient requested");
    Ok((v, ga, gb))
}

/// Mutual-information loss with a spatial displacement window: the joint
/// matrix also pairs each pixel of `pred_a` with the neighbors of `pred_b`
/// within `half_width` in each direction. `half_width` 0 is [`iic_loss`].
pub fn iic_loss_displaced(
    pred_a: &SoftPrediction,
    pred_b: &SoftPrediction,
    half_width: usize,
) -> Result<LossValue> {
    iic_impl(pred_a, pred_b, half_width, false).map(|(v, _)| v)
}

pub fn iic_loss_displaced_grad(
    pred_a: &SoftPrediction,
    pred_b: &SoftPrediction,
    half_width: usize,
) -> Result<(LossValue, Array3<f64>, Array3<f64>)> {
    let (v, g) = iic_impl(pred_a, pred_b, half_width, true)?;
    let (ga, gb) = g.expect("gradient requested");
    Ok((v, ga, gb))
}

fn iic_impl(
    pred_a: &SoftPrediction,
    pred_b: &SoftPrediction,
    half_width: usize,
    want_grad: bool,
) -> Result<(LossValue, Option<(Array3<f64>, Array3<f64>)>)> {
    let k = pred_a.n_classes();
    if k != pred_b.n_classes() {
        return Err(Error::Shape(format!(
            "class count mismatch: {k} vs {}",
            pred_b.n_classes()
        )));
    }
    let (valid, n) = joint_validity(pred_a, pred_b)?;
    let (_, h, w) = pred_a.probs.dim();
    let t = half_width as isize;

    // All (pixel-a, displaced pixel-b) pairs entering the joint matrix.
    let mut pairs: Vec<((usize, usize), (usize, usize))> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !valid[(r, c)] {
                continue;
            }
            for dr in -t..=t {
                for dc in -t..=t {
                    let (br, bc) = (r as isize + dr, c as isize + dc);
                    if br < 0 || bc < 0 || br >= h as isize || bc >= w as isize {
                        continue;
                    }
                    let (br, bc) = (br as usize, bc as usize);
                    if valid[(br, bc)] {
                        pairs.push(((r, c), (br, bc)));
                    }
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Data("empty validity intersection".into()));
    }
    let n_pairs = pairs.len();

    // Joint distribution over class pairs, then symmetrize.
    let mut joint = Array2::<f64>::zeros((k, k));
    for &((ar, ac), (br, bc)) in &pairs {
        for i in 0..k {
            let a = pred_a.probs[(i, ar, ac)];
            if a == 0.0 {
                continue;
            }
            for j in 0..k {
                joint[(i, j)] += a * pred_b.probs[(j, br, bc)];
            }
        }
    }
    joint.mapv_inplace(|v| v / n_pairs as f64);
    let sym = Array2::from_shape_fn((k, k), |(i, j)| 0.5 * (joint[(i, j)] + joint[(j, i)]));

    let row: Vec<f64> = (0..k).map(|i| sym.row(i).sum()).collect();
    let col: Vec<f64> = (0..k).map(|j| sym.column(j).sum()).collect();

    let lnm = |v: f64| v.max(LOG_CLAMP).ln();
    let mut value = 0.0;
    for i in 0..k {
        for j in 0..k {
            let s = sym[(i, j)];
            value -= s * (lnm(s) - lnm(row[i]) - lnm(col[j]));
        }
    }

    let grad = if want_grad {
        // dL/dS with the clamp treated exactly as implemented: the log of a
        // clamped entry is constant, so its derivative term drops out.
        let ind = |v: f64| if v > LOG_CLAMP { 1.0 } else { 0.0 };
        let mut g_sym = Array2::<f64>::zeros((k, k));
        for a in 0..k {
            for b in 0..k {
                let s = sym[(a, b)];
                g_sym[(a, b)] = -(lnm(s) - lnm(row[a]) - lnm(col[b])) - ind(s)
                    + (sym.row(a).sum() / row[a].max(LOG_CLAMP)) * ind(row[a])
                    + (sym.column(b).sum() / col[b].max(LOG_CLAMP)) * ind(col[b]);
            }
        }
        // Chain through symmetrization and the joint accumulation.
        let g_joint = Array2::from_shape_fn((k, k), |(i, j)| 0.5 * (g_sym[(i, j)] + g_sym[(j, i)]));
        let mut ga = Array3::zeros((k, h, w));
        let mut gb = Array3::zeros((k, h, w));
        for &((ar, ac), (br, bc)) in &pairs {
            for i in 0..k {
                let mut acc_a = 0.0;
                let mut acc_b = 0.0;
                for j in 0..k {
                    acc_a += g_joint[(i, j)] * pred_b.probs[(j, br, bc)];
                    acc_b += g_joint[(j, i)] * pred_a.probs[(j, ar, ac)];
                }
                ga[(i, ar, ac)] += acc_a / n_pairs as f64;
                gb[(i, br, bc)] += acc_b / n_pairs as f64;
            }
        }
        Some((ga, gb))
    } else {
        None
    };

    Ok((LossValue::new(value, n), grad))
}
