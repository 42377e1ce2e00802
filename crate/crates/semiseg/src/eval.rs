//! Segmentation metrics: per-class and mean IoU, max-overlap cluster
//! assignment for unsupervised heads, binary cross entropy reporting, and
//! difference-image rendering.
//!
//! Mean IoU aggregates intersection/union counts over the whole dataset
//! before dividing (recorded in the report); the per-image average is also
//! computed and labeled so the two conventions can be compared. A class
//! absent from both masks scores 1.0 — both sides agree it is not there.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask, SoftPrediction};
use crate::losses::LOG_CLAMP;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean over classes of dataset-aggregated per-class IoU.
    pub mean_iou: f64,
    pub per_class_iou: BTreeMap<u8, f64>,
    /// Mean over images of per-image class-mean IoU (alternative convention).
    pub per_image_mean_iou: f64,
    /// Cluster-to-class assignment when an over-clustering head was matched.
    pub assignment: Option<BTreeMap<u8, u8>>,
    pub bce: Option<f64>,
    pub n_samples: usize,
    /// Aggregation convention of `mean_iou`.
    pub aggregation: String,
}

/// Intersection-over-union of one class between two masks; 1.0 when the
/// class is absent from both.
pub fn iou(pred: &Mask, gt: &Mask, class_id: u8) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (p, g) in pred.data.iter().zip(gt.data.iter()) {
        let in_p = *p == class_id;
        let in_g = *g == class_id;
        if in_p && in_g {
            inter += 1;
        }
        if in_p || in_g {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean IoU over `classes`, aggregated across all mask pairs.
pub fn mean_iou(preds: &[Mask], gts: &[Mask], classes: &[u8]) -> Result<MetricsReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "need equal-length non-empty mask lists, got {} predictions and {} references",
            preds.len(),
            gts.len()
        )));
    }
    if classes.is_empty() {
        return Err(Error::Data("no classes to evaluate".into()));
    }

    let mut inter: BTreeMap<u8, usize> = classes.iter().map(|&c| (c, 0)).collect();
    let mut union: BTreeMap<u8, usize> = classes.iter().map(|&c| (c, 0)).collect();
    let mut per_image_acc = 0.0;
    for (pred, gt) in preds.iter().zip(gts) {
        if pred.data.dim() != gt.data.dim() {
            return Err(Error::Shape(format!(
                "mask sizes differ: {:?} vs {:?}",
                pred.data.dim(),
                gt.data.dim()
            )));
        }
        let mut image_acc = 0.0;
        for &class in classes {
            let mut i = 0usize;
            let mut u = 0usize;
            for (p, g) in pred.data.iter().zip(gt.data.iter()) {
                let in_p = *p == class;
                let in_g = *g == class;
                if in_p && in_g {
                    i += 1;
                }
                if in_p || in_g {
                    u += 1;
                }
            }
            *inter.get_mut(&class).expect("class present") += i;
            *union.get_mut(&class).expect("class present") += u;
            image_acc += if u == 0 { 1.0 } else { i as f64 / u as f64 };
        }
        per_image_acc += image_acc / classes.len() as f64;
    }

    let per_class_iou: BTreeMap<u8, f64> = classes
        .iter()
        .map(|&c| {
            let u = union[&c];
            (c, if u == 0 { 1.0 } else { inter[&c] as f64 / u as f64 })
        })
        .collect();
    let mean = per_class_iou.values().sum::<f64>() / classes.len() as f64;
    Ok(MetricsReport {
        mean_iou: mean,
        per_class_iou,
        per_image_mean_iou: per_image_acc / preds.len() as f64,
        assignment: None,
        bce: None,
        n_samples: preds.len(),
        aggregation: "dataset-aggregated".into(),
    })
}

/// Maps each predicted cluster to the ground-truth class it overlaps most,
/// counted over the whole evaluation set. Many clusters may share a class;
/// clusters with no pixels map to background.
pub fn match_clusters(
    preds: &[Mask],
    gts: &[Mask],
    n_clusters: usize,
    n_classes: usize,
) -> BTreeMap<u8, u8> {
    let mut overlap = vec![vec![0usize; n_classes]; n_clusters];
    for (pred, gt) in preds.iter().zip(gts) {
        for (p, g) in pred.data.iter().zip(gt.data.iter()) {
            if (*p as usize) < n_clusters && (*g as usize) < n_classes {
                overlap[*p as usize][*g as usize] += 1;
            }
        }
    }
    (0..n_clusters)
        .map(|cluster| {
            let row = &overlap[cluster];
            let total: usize = row.iter().sum();
            let class = if total == 0 {
                0
            } else {
                row.iter().enumerate().max_by_key(|&(_, &n)| n).map(|(c, _)| c).unwrap_or(0) as u8
            };
            (cluster as u8, class)
        })
        .collect()
}

/// Rewrites cluster ids through an assignment table.
pub fn apply_assignment(mask: &Mask, assignment: &BTreeMap<u8, u8>) -> Mask {
    Mask::new(mask.data.mapv(|v| assignment.get(&v).copied().unwrap_or(0)))
}

/// Mean per-pixel binary cross entropy of the foreground probability.
pub fn bce_report(pred: &SoftPrediction, gt: &Mask) -> Result<f64> {
    if pred.n_classes() != 2 {
        return Err(Error::Data(format!(
            "binary cross entropy needs a 2-class prediction, got {}",
            pred.n_classes()
        )));
    }
    if let Some(max) = gt.max_class() {
        if max > 1 {
            return Err(Error::Data(format!(
                "binary cross entropy needs a binary mask, found class {max}"
            )));
        }
    }
    let (h, w) = (gt.height(), gt.width());
    if pred.height() != h || pred.width() != w {
        return Err(Error::Shape("prediction/mask size mismatch".into()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for r in 0..h {
        for c in 0..w {
            if !pred.validity[(r, c)] {
                continue;
            }
            let p = pred.probs[(1, r, c)].clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
            let t = gt.data[(r, c)] as f64;
            total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("no valid pixels".into()));
    }
    Ok(total / n as f64)
}

/// Distinct colors for up to 10 classes; background is black.
const PALETTE: [[u8; 3]; 10] = [
    [0, 0, 0],
    [230, 60, 60],
    [60, 160, 230],
    [90, 200, 90],
    [230, 200, 60],
    [180, 90, 220],
    [240, 140, 60],
    [90, 220, 210],
    [240, 110, 170],
    [160, 160, 160],
];

fn class_color(class: u8) -> Rgb<u8> {
    Rgb(PALETTE[class as usize % PALETTE.len()])
}

/// Writes a four-panel image — original, reference mask, predicted mask,
/// and their difference — separated by thin borders.
pub fn render_diff(pred: &Mask, gt: &Mask, image: &Image, path: &Path) -> Result<()> {
    let (h, w) = (gt.height(), gt.width());
    if pred.data.dim() != gt.data.dim() || image.height() != h || image.width() != w {
        return Err(Error::Shape("render_diff inputs must share one size".into()));
    }
    const GAP: usize = 2;
    let total_w = 4 * w + 3 * GAP;
    let mut canvas = RgbImage::from_pixel(total_w as u32, h as u32, Rgb([255, 255, 255]));
    for r in 0..h {
        for c in 0..w {
            // Panel 1: original image (first channel as grayscale).
            let v = (image.data[(0, r, c)].clamp(0.0, 1.0) * 255.0).round() as u8;
            canvas.put_pixel(c as u32, r as u32, Rgb([v, v, v]));
            // Panel 2: reference mask.
            let x2 = (w + GAP + c) as u32;
            canvas.put_pixel(x2, r as u32, class_color(gt.data[(r, c)]));
            // Panel 3: predicted mask.
            let x3 = (2 * (w + GAP) + c) as u32;
            canvas.put_pixel(x3, r as u32, class_color(pred.data[(r, c)]));
            // Panel 4: disagreement in white.
            let x4 = (3 * (w + GAP) + c) as u32;
            let diff = if pred.data[(r, c)] != gt.data[(r, c)] { 255 } else { 0 };
            canvas.put_pixel(x4, r as u32, Rgb([diff, diff, diff]));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    canvas
        .save(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}
