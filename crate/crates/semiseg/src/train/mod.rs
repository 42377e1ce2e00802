//! Training loops: the semi-supervised consistency pipeline and the fully
//! self-supervised mutual-information pipeline, plus checkpoint selection.
//!
//! Semi-supervised epoch: the supervised stream weakly augments each labeled
//! (image, mask) pair and takes the Dice loss against the transformed mask;
//! the unsupervised stream strongly augments each unlabeled image, applies
//! one shared weak transform to both views, realigns the strong branch's
//! prediction through the inverse affine map, and penalizes divergence from
//! the (detached) clean-view prediction. The smaller subset is cycled so
//! both streams run the same number of equally-sized batches per epoch, and
//! each paired step sums both losses before a single parameter update.
//!
//! Self-supervised epoch: each image is paired with a copy rotated by a
//! uniform random angle; both heads' predictions of the rotated view are
//! realigned and the negative mutual information against the direct view is
//! minimized for the main and auxiliary head together. Labels are never
//! read — a [`MaskQuarantineGuard`] is held for the whole loop.
//!
//! Per epoch both loops log a degenerate-solution flag: it fires when the
//! validation marginal entropy of the main head falls below `0.1 * ln K`,
//! the collapse where the network ignores its input.

pub mod optim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::{
    apply_image, apply_mask, conjugate_by_weak, invert_prediction_cached, resample_backward,
    strong_augment, AffineRecord,
};
use crate::config::{AugOrder, CheckpointPolicy, Mode, PipelineConfig, UnsupLoss};
use crate::dataset::{ImageSample, LabelSplit, MaskQuarantineGuard};
use crate::error::{Error, Result};
use crate::grid::{entropy, Image, Mask, SoftPrediction};
use crate::losses;
use crate::model::{checkpoint, Forward, UNet};
use crate::rng::{derive_seed, rng_for, stream};
use optim::Optimizer;

/// Fraction of `ln K` below which the validation marginal entropy flags a
/// degenerate (input-ignoring) solution.
pub const DEGENERATE_ENTROPY_FRACTION: f64 = 0.1;

/// Name of the normalization-stats file referenced by checkpoints.
pub const NORM_STATS_FILE: &str = "norm_stats.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub sup_loss: f64,
    pub unsup_loss: f64,
    pub final_loss: f64,
    pub val_sup: f64,
    pub val_final: f64,
    pub degenerate: bool,
    pub sup_steps: usize,
    pub unsup_steps: usize,
}

#[derive(Debug)]
pub struct TrainState {
    pub traces: Vec<EpochTrace>,
    /// Best checkpoint per policy: (epoch, file).
    pub best: BTreeMap<CheckpointPolicy, (usize, PathBuf)>,
    pub run_dir: PathBuf,
}

impl TrainState {
    pub fn new(run_dir: &Path) -> Self {
        Self { traces: Vec::new(), best: BTreeMap::new(), run_dir: run_dir.to_path_buf() }
    }

    fn policy_value(trace: &EpochTrace, policy: CheckpointPolicy) -> f64 {
        match policy {
            CheckpointPolicy::BestSupervised => trace.val_sup,
            CheckpointPolicy::BestFinal => trace.val_final,
        }
    }

    /// Appends an epoch and persists a checkpoint for every policy whose
    /// validation loss strictly improved (ties keep the earlier epoch).
    pub fn record_epoch(
        &mut self,
        trace: EpochTrace,
        net: &mut UNet,
        fingerprint: &str,
    ) -> Result<()> {
        for policy in [CheckpointPolicy::BestSupervised, CheckpointPolicy::BestFinal] {
            let value = Self::policy_value(&trace, policy);
            let improved = match self.best.get(&policy) {
                None => true,
                Some(&(epoch, _)) => value < Self::policy_value(&self.traces[epoch], policy),
            };
            if improved {
                let path = self.run_dir.join("checkpoints").join(format!("{policy}.ckpt"));
                checkpoint::save(net, &path, fingerprint, NORM_STATS_FILE)?;
                self.best.insert(policy, (trace.epoch, path));
            }
        }
        self.traces.push(trace);
        Ok(())
    }

    /// Writes `traces.csv` into the run directory.
    pub fn write_traces_csv(&self) -> Result<PathBuf> {
        let mut text =
            String::from("epoch,sup_loss,unsup_loss,final_loss,val_sup,val_final,degenerate_flag\n");
        for t in &self.traces {
            text.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                t.epoch,
                t.sup_loss,
                t.unsup_loss,
                t.final_loss,
                t.val_sup,
                t.val_final,
                u8::from(t.degenerate)
            ));
        }
        let path = self.run_dir.join("traces.csv");
        std::fs::create_dir_all(&self.run_dir)?;
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Epoch with the minimal validation loss of the policy's kind plus its
/// stored checkpoint; ties break toward the earliest epoch.
pub fn select_checkpoint(state: &TrainState, policy: CheckpointPolicy) -> Result<(usize, PathBuf)> {
    if state.traces.is_empty() {
        return Err(Error::Data("no epochs recorded; cannot select a checkpoint".into()));
    }
    let mut best_epoch = 0usize;
    let mut best_value = f64::INFINITY;
    for trace in &state.traces {
        let value = TrainState::policy_value(trace, policy);
        if value < best_value {
            best_value = value;
            best_epoch = trace.epoch;
        }
    }
    let (recorded, path) = state
        .best
        .get(&policy)
        .ok_or_else(|| Error::Data(format!("no checkpoint recorded for {policy}")))?;
    debug_assert_eq!(*recorded, best_epoch);
    Ok((best_epoch, path.clone()))
}

fn weak_record(cfg: &PipelineConfig, seed: u64) -> AffineRecord {
    let mut rng = rng_for(seed, &[stream::WEAK]);
    cfg.weak.sample(&mut rng)
}

/// Boolean grid as a background/foreground mask, for warping validity
/// through a spatial transform.
fn validity_as_mask(valid: &ndarray::Array2<bool>) -> Mask {
    Mask::new(valid.mapv(u8::from))
}

struct UnsupView {
    target_pred: SoftPrediction,
    student_fwd: Forward,
    aligned: SoftPrediction,
    cache: crate::augment::ResampleCache,
}

/// Builds the two views of one unlabeled image and the aligned student
/// prediction. The target forward is used value-only (detached).
fn unsup_views(
    net: &UNet,
    image: &Image,
    cfg: &PipelineConfig,
    strong_seed: u64,
    weak_seed: u64,
) -> Result<UnsupView> {
    let (h, w) = (image.height(), image.width());
    let wrec = weak_record(cfg, weak_seed);

    let (clean, strong_view, valid_student, align) = match cfg.aug_order {
        AugOrder::StrongFirst => {
            let (strong_img, srec) = strong_augment(image, &cfg.strong, strong_seed);
            let clean = apply_image(image, &wrec)?;
            let strong_view = apply_image(&strong_img, &wrec)?;
            let strong_valid = validity_as_mask(&srec.valid_after_apply(h, w));
            let warped = apply_mask(&strong_valid, &wrec)?;
            let weak_valid = wrec.valid_after_apply(h, w);
            let valid = ndarray::Array2::from_shape_fn((h, w), |idx| {
                weak_valid[idx] && warped.data[idx] == 1
            });
            (clean, strong_view, valid, conjugate_by_weak(&srec, &wrec))
        }
        AugOrder::WeakFirst => {
            let clean = apply_image(image, &wrec)?;
            let (strong_view, srec) = strong_augment(&clean, &cfg.strong, strong_seed);
            let weak_valid = validity_as_mask(&wrec.valid_after_apply(h, w));
            let warped = apply_mask(&weak_valid, &srec)?;
            let strong_valid = srec.valid_after_apply(h, w);
            let valid = ndarray::Array2::from_shape_fn((h, w), |idx| {
                strong_valid[idx] && warped.data[idx] == 1
            });
            (clean, strong_view, valid, srec)
        }
    };

    let target_fwd = net.forward(&clean)?;
    let target_pred = SoftPrediction::new(target_fwd.main.clone(), wrec.valid_after_apply(h, w))?;
    let student_fwd = net.forward(&strong_view)?;
    let student_pred = SoftPrediction::new(student_fwd.main.clone(), valid_student)?;
    let (aligned, cache) = invert_prediction_cached(&student_pred, &align)?;
    Ok(UnsupView { target_pred, student_fwd, aligned, cache })
}

/// Unsupervised loss for one image; backpropagates through the student
/// branch when `grad_scale > 0`.
fn unsup_step(
    net: &mut UNet,
    image: &Image,
    cfg: &PipelineConfig,
    strong_seed: u64,
    weak_seed: u64,
    grad_scale: f64,
) -> Result<f64> {
    let view = unsup_views(net, image, cfg, strong_seed, weak_seed)?;
    let (value, grad_aligned) = match cfg.unsup_loss {
        UnsupLoss::KlDiv => {
            if grad_scale > 0.0 {
                let (lv, g) = losses::kl_consistency_grad(&view.target_pred, &view.aligned)?;
                (lv.value, Some(g))
            } else {
                (losses::kl_consistency(&view.target_pred, &view.aligned)?.value, None)
            }
        }
        UnsupLoss::Iid => {
            if grad_scale > 0.0 {
                let (lv, _, gb) = losses::iic_loss_displaced_grad(
                    &view.target_pred,
                    &view.aligned,
                    cfg.iic_displacement,
                )?;
                (lv.value, Some(gb))
            } else {
                (
                    losses::iic_loss_displaced(
                        &view.target_pred,
                        &view.aligned,
                        cfg.iic_displacement,
                    )?
                    .value,
                    None,
                )
            }
        }
    };
    if let Some(mut g) = grad_aligned {
        g.mapv_inplace(|v| v * grad_scale);
        let g_student = resample_backward(&view.cache, &view.aligned, &g);
        net.backward(&view.student_fwd, &g_student, None);
    }
    Ok(value)
}

/// Mean Dice over validation samples plus the marginal used by the
/// degenerate-solution monitor.
fn validation_supervised(net: &UNet, val: &[ImageSample]) -> Result<(f64, Vec<f64>)> {
    let k = net.arch.main_classes;
    let mut total = 0.0;
    let mut n = 0usize;
    let mut marginal = vec![0.0; k];
    for sample in val {
        let Some(mask) = sample.mask.as_ref() else { continue };
        let (pred, _) = net.predict(&sample.image)?;
        total += losses::dice_loss(&pred, mask)?.value;
        for (slot, m) in marginal.iter_mut().zip(pred.marginal()) {
            *slot += m;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("validation set has no masked samples".into()));
    }
    for slot in marginal.iter_mut() {
        *slot /= n as f64;
    }
    Ok((total / n as f64, marginal))
}

fn degenerate_flag(marginal: &[f64]) -> bool {
    entropy(marginal) < DEGENERATE_ENTROPY_FRACTION * (marginal.len() as f64).ln()
}

/// Semi-supervised training over a label split. Checkpoints for both
/// policies are maintained throughout, so one run serves both pipeline
/// variants of its unsupervised loss.
pub fn semi_train(
    net: &mut UNet,
    samples: &[ImageSample],
    val: &[ImageSample],
    split: &LabelSplit,
    cfg: &PipelineConfig,
    run_dir: &Path,
) -> Result<TrainState> {
    cfg.validate()?;
    if cfg.mode != Mode::Semi {
        return Err(Error::Config("semi_train requires mode = semi".into()));
    }
    let _guard = MaskQuarantineGuard::activate();

    let by_id: BTreeMap<&str, &ImageSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut labeled = Vec::new();
    for id in &split.labeled {
        let s = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("labeled sample {id} not found")))?;
        if s.mask.is_none() {
            return Err(Error::Data(format!("missing mask for labeled sample {id}")));
        }
        labeled.push(*s);
    }
    let mut unlabeled = Vec::new();
    for id in &split.unlabeled {
        let s = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("unlabeled sample {id} not found")))?;
        unlabeled.push(*s);
    }
    if labeled.is_empty() {
        return Err(Error::Data(
            "no labeled samples; pure self-supervision is the other mode".into(),
        ));
    }
    if unlabeled.is_empty() {
        log::warn!("no unlabeled samples: degenerating to supervised-only training");
    }

    let fingerprint = cfg.fingerprint();
    let mut state = TrainState::new(run_dir);
    let mut optimizer = Optimizer::new(cfg.optimizer, net);
    let batch = cfg.batch_size;
    let bscale = 1.0 / batch as f64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.lr_at(cfg.lr, epoch);
        let mut lab_order: Vec<usize> = (0..labeled.len()).collect();
        lab_order.shuffle(&mut rng_for(cfg.seed, &[stream::SHUFFLE, 1, epoch as u64]));
        let mut unl_order: Vec<usize> = (0..unlabeled.len()).collect();
        unl_order.shuffle(&mut rng_for(cfg.seed, &[stream::SHUFFLE, 2, epoch as u64]));

        let larger = labeled.len().max(unlabeled.len());
        let steps = larger.div_ceil(batch);
        let mut sup_steps = 0usize;
        let mut unsup_steps = 0usize;
        let mut sup_acc = 0.0;
        let mut unsup_acc = 0.0;

        for step in 0..steps {
            for j in 0..batch {
                let pos = step * batch + j;
                let sample = labeled[lab_order[pos % labeled.len()]];
                let mask = sample.mask.as_ref().expect("checked above");
                let weak_seed = derive_seed(cfg.seed, &[stream::WEAK, epoch as u64, pos as u64, 0]);
                let wrec = weak_record(cfg, weak_seed);
                let (x, m, _) = crate::augment::weak_apply(&sample.image, Some(mask), &wrec);
                let m = m.expect("mask transformed alongside image");
                let valid = wrec.valid_after_apply(x.height(), x.width());
                let fwd = net.forward(&x)?;
                let pred = SoftPrediction::new(fwd.main.clone(), valid)?;
                let (lv, mut g) = losses::dice_loss_grad(&pred, &m)?;
                g.mapv_inplace(|v| v * bscale);
                net.backward(&fwd, &g, None);
                sup_acc += lv.value;
            }
            sup_steps += 1;

            if !unlabeled.is_empty() {
                for j in 0..batch {
                    let pos = step * batch + j;
                    let sample = unlabeled[unl_order[pos % unlabeled.len()]];
                    let strong_seed =
                        derive_seed(cfg.seed, &[stream::STRONG, epoch as u64, pos as u64]);
                    let weak_seed =
                        derive_seed(cfg.seed, &[stream::WEAK, epoch as u64, pos as u64, 1]);
                    unsup_acc += unsup_step(
                        net,
                        &sample.image,
                        cfg,
                        strong_seed,
                        weak_seed,
                        cfg.unsup_weight * bscale,
                    )?;
                }
                unsup_steps += 1;
            }

            optimizer.step(net, lr);
            net.zero_grads();
        }

        let sup_loss = sup_acc / (sup_steps * batch) as f64;
        let unsup_loss =
            if unsup_steps > 0 { unsup_acc / (unsup_steps * batch) as f64 } else { 0.0 };
        let final_loss = sup_loss + cfg.unsup_weight * unsup_loss;

        let (val_sup, marginal) = validation_supervised(net, val)?;
        let val_unsup = if unlabeled.is_empty() {
            0.0
        } else {
            // Fixed augmentation seeds keep this comparable across epochs.
            let mut acc = 0.0;
            for (i, sample) in val.iter().enumerate() {
                let strong_seed = derive_seed(cfg.seed, &[stream::VAL_AUG, 1, i as u64]);
                let weak_seed = derive_seed(cfg.seed, &[stream::VAL_AUG, 2, i as u64]);
                acc += unsup_step(net, &sample.image, cfg, strong_seed, weak_seed, 0.0)?;
            }
            acc / val.len() as f64
        };
        let val_final = val_sup + cfg.unsup_weight * val_unsup;

        state.record_epoch(
            EpochTrace {
                epoch,
                sup_loss,
                unsup_loss,
                final_loss,
                val_sup,
                val_final,
                degenerate: degenerate_flag(&marginal),
                sup_steps,
                unsup_steps,
            },
            net,
            &fingerprint,
        )?;
    }

    state.write_traces_csv()?;
    Ok(state)
}

/// Mutual-information loss of one (image, rotated image) pair across both
/// heads; backpropagates through both branches when `grad_scale > 0`.
fn self_pair_step(
    net: &mut UNet,
    image: &Image,
    rotation_deg: f64,
    cfg: &PipelineConfig,
    grad_scale: f64,
) -> Result<f64> {
    let rec = AffineRecord::rotation(rotation_deg);
    let rotated = apply_image(image, &rec)?;
    let fwd_a = net.forward(image)?;
    let fwd_b = net.forward(&rotated)?;
    let (h, w) = (image.height(), image.width());
    let valid_b = rec.valid_after_apply(h, w);

    let aux_a_probs = fwd_a
        .aux
        .clone()
        .ok_or_else(|| Error::Config("self-supervised training requires an auxiliary head".into()))?;
    let aux_b_probs = fwd_b.aux.clone().expect("aux head present on both passes");

    let main_a = SoftPrediction::all_valid(fwd_a.main.clone());
    let aux_a = SoftPrediction::all_valid(aux_a_probs);
    let main_b = SoftPrediction::new(fwd_b.main.clone(), valid_b.clone())?;
    let aux_b = SoftPrediction::new(aux_b_probs, valid_b)?;
    let (main_b_al, cache_main) = invert_prediction_cached(&main_b, &rec)?;
    let (aux_b_al, cache_aux) = invert_prediction_cached(&aux_b, &rec)?;

    let d = cfg.iic_displacement;
    if grad_scale > 0.0 {
        let (lm, mut ga_m, mut gb_m) = losses::iic_loss_displaced_grad(&main_a, &main_b_al, d)?;
        let (la, mut ga_a, mut gb_a) = losses::iic_loss_displaced_grad(&aux_a, &aux_b_al, d)?;
        for g in [&mut ga_m, &mut gb_m, &mut ga_a, &mut gb_a] {
            g.mapv_inplace(|v| v * grad_scale);
        }
        net.backward(&fwd_a, &ga_m, Some(&ga_a));
        let g_raw_main = resample_backward(&cache_main, &main_b_al, &gb_m);
        let g_raw_aux = resample_backward(&cache_aux, &aux_b_al, &gb_a);
        net.backward(&fwd_b, &g_raw_main, Some(&g_raw_aux));
        Ok(lm.value + la.value)
    } else {
        let lm = losses::iic_loss_displaced(&main_a, &main_b_al, d)?;
        let la = losses::iic_loss_displaced(&aux_a, &aux_b_al, d)?;
        Ok(lm.value + la.value)
    }
}

/// Fully self-supervised training: no mask is ever read (enforced by the
/// quarantine guard). Checkpoints select on the total validation loss.
pub fn self_train(
    net: &mut UNet,
    samples: &[ImageSample],
    val: &[ImageSample],
    cfg: &PipelineConfig,
    run_dir: &Path,
) -> Result<TrainState> {
    cfg.validate()?;
    if cfg.mode != Mode::SelfSup {
        return Err(Error::Config("self_train requires mode = self".into()));
    }
    if !net.has_aux() {
        return Err(Error::Config("self-supervised training requires an auxiliary head".into()));
    }
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("self-supervised training needs validation images".into()));
    }
    let _guard = MaskQuarantineGuard::activate();

    let fingerprint = cfg.fingerprint();
    let mut state = TrainState::new(run_dir);
    let mut optimizer = Optimizer::new(cfg.optimizer, net);
    let batch = cfg.batch_size;
    let bscale = 1.0 / batch as f64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.lr_at(cfg.lr, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[stream::SHUFFLE, 3, epoch as u64]));
        let steps = samples.len().div_ceil(batch);
        let mut acc = 0.0;

        for step in 0..steps {
            for j in 0..batch {
                let pos = step * batch + j;
                let sample = &samples[order[pos % samples.len()]];
                let rotation = rng_for(cfg.seed, &[stream::SELF_ROT, epoch as u64, pos as u64])
                    .gen_range(0.0..360.0);
                acc += self_pair_step(net, &sample.image, rotation, cfg, bscale)?;
            }
            optimizer.step(net, lr);
            net.zero_grads();
        }
        let unsup_loss = acc / (steps * batch) as f64;

        // Validation: fixed rotations per sample for epoch comparability.
        let mut val_acc = 0.0;
        let mut marginal = vec![0.0; net.arch.main_classes];
        for (i, sample) in val.iter().enumerate() {
            let rotation =
                rng_for(cfg.seed, &[stream::VAL_AUG, 3, i as u64]).gen_range(0.0..360.0);
            val_acc += self_pair_step(net, &sample.image, rotation, cfg, 0.0)?;
            let (pred, _) = net.predict(&sample.image)?;
            for (slot, m) in marginal.iter_mut().zip(pred.marginal()) {
                *slot += m;
            }
        }
        let val_total = val_acc / val.len() as f64;
        for slot in marginal.iter_mut() {
            *slot /= val.len() as f64;
        }

        state.record_epoch(
            EpochTrace {
                epoch,
                sup_loss: 0.0,
                unsup_loss,
                final_loss: unsup_loss,
                // No supervised loss exists here; both policies track the
                // total validation loss.
                val_sup: val_total,
                val_final: val_total,
                degenerate: degenerate_flag(&marginal),
                sup_steps: 0,
                unsup_steps: steps,
            },
            net,
            &fingerprint,
        )?;
    }

    state.write_traces_csv()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetRef, OptimizerKind};
    use crate::dataset::{generate_synthetic, make_label_split, Split, SyntheticKind};
    use crate::model::UNetArch;

    fn desk_cfg(epochs: usize) -> PipelineConfig {
        let mut cfg = PipelineConfig::semi_defaults(DatasetRef::Synthetic {
            kind: SyntheticKind::Blobs,
            n: 12,
            size: (32, 32),
        });
        cfg.epochs = epochs;
        cfg.base_channels = 2;
        cfg.seed = 5;
        cfg
    }

    fn tiny_data(n: usize) -> (Vec<ImageSample>, Vec<ImageSample>) {
        let samples = generate_synthetic(SyntheticKind::Blobs, n, (32, 32), 3).unwrap();
        let train: Vec<ImageSample> =
            samples.iter().filter(|s| s.split == Split::Train).cloned().collect();
        let val: Vec<ImageSample> = samples
            .iter()
            .filter(|s| s.split == Split::Test)
            .cloned()
            .map(|mut s| {
                s.split = Split::Val;
                s
            })
            .collect();
        (train, val)
    }

    #[test]
    fn subset_looping_balances_step_counts() {
        let (train, val) = tiny_data(12); // 10 train, 2 val
        let split = make_label_split(&train, 0.2, 1).unwrap();
        assert_eq!(split.labeled.len(), 2);
        assert_eq!(split.unlabeled.len(), 8);
        let train = split.quarantine(train);

        let cfg = desk_cfg(1);
        let mut net = UNet::new(UNetArch::new(1, 2, 2), cfg.seed);
        let dir = tempfile::tempdir().unwrap();
        let state = semi_train(&mut net, &train, &val, &split, &cfg, dir.path()).unwrap();
        let trace = &state.traces[0];
        // Larger subset has 8 samples at batch 1: 8 steps each stream.
        assert_eq!(trace.sup_steps, 8);
        assert_eq!(trace.unsup_steps, 8);
    }

    #[test]
    fn full_ratio_degenerates_to_supervised_only() {
        let (train, val) = tiny_data(12);
        let split = make_label_split(&train, 1.0, 1).unwrap();
        let train = split.quarantine(train);
        let cfg = desk_cfg(1);
        let mut net = UNet::new(UNetArch::new(1, 2, 2), cfg.seed);
        let dir = tempfile::tempdir().unwrap();
        let state = semi_train(&mut net, &train, &val, &split, &cfg, dir.path()).unwrap();
        assert_eq!(state.traces[0].unsup_steps, 0);
        assert_eq!(state.traces[0].sup_steps, train.len());
    }

    #[test]
    fn empty_labeled_set_is_an_error() {
        let (train, val) = tiny_data(12);
        let split = LabelSplit {
            labeled: vec![],
            unlabeled: train.iter().map(|s| s.id.clone()).collect(),
            ratio: 0.01,
            seed: 1,
        };
        let cfg = desk_cfg(1);
        let mut net = UNet::new(UNetArch::new(1, 2, 2), cfg.seed);
        let dir = tempfile::tempdir().unwrap();
        assert!(semi_train(&mut net, &train, &val, &split, &cfg, dir.path()).is_err());
    }

    #[test]
    fn epoch_zero_losses_are_reproducible() {
        let (train, val) = tiny_data(12);
        let split = make_label_split(&train, 0.5, 2).unwrap();
        let train = split.quarantine(train);
        let cfg = desk_cfg(1);
        let run = |dir: &Path| {
            let mut net = UNet::new(UNetArch::new(1, 2, 2), cfg.seed);
            semi_train(&mut net, &train, &val, &split, &cfg, dir).unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run(d1.path());
        let b = run(d2.path());
        assert!((a.traces[0].final_loss - b.traces[0].final_loss).abs() < 1e-6);
        assert!((a.traces[0].val_final - b.traces[0].val_final).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_selection_returns_argmin_of_each_policy() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = TrainState::new(dir.path());
        let mut net = UNet::new(UNetArch::new(1, 2, 2), 1);
        // Scripted traces: val_sup minimal at epoch 1, val_final at epoch 2.
        let scripted = [(0.5, 0.9), (0.3, 0.8), (0.4, 0.2), (0.6, 0.7)];
        for (epoch, &(val_sup, val_final)) in scripted.iter().enumerate() {
            state
                .record_epoch(
                    EpochTrace {
                        epoch,
                        sup_loss: 0.0,
                        unsup_loss: 0.0,
                        final_loss: 0.0,
                        val_sup,
                        val_final,
                        degenerate: false,
                        sup_steps: 1,
                        unsup_steps: 1,
                    },
                    &mut net,
                    "test",
                )
                .unwrap();
        }
        let (sup_epoch, sup_path) =
            select_checkpoint(&state, CheckpointPolicy::BestSupervised).unwrap();
        let (fin_epoch, fin_path) = select_checkpoint(&state, CheckpointPolicy::BestFinal).unwrap();
        assert_eq!(sup_epoch, 1);
        assert_eq!(fin_epoch, 2);
        assert!(sup_path.exists() && fin_path.exists());
        assert_ne!(sup_path, fin_path);
    }

    #[test]
    fn tie_breaks_to_the_earliest_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = TrainState::new(dir.path());
        let mut net = UNet::new(UNetArch::new(1, 2, 2), 1);
        for (epoch, v) in [0.4, 0.4, 0.4].iter().enumerate() {
            state
                .record_epoch(
                    EpochTrace {
                        epoch,
                        sup_loss: 0.0,
                        unsup_loss: 0.0,
                        final_loss: 0.0,
                        val_sup: *v,
                        val_final: *v,
                        degenerate: false,
                        sup_steps: 1,
                        unsup_steps: 1,
                    },
                    &mut net,
                    "test",
                )
                .unwrap();
        }
        let (epoch, _) = select_checkpoint(&state, CheckpointPolicy::BestSupervised).unwrap();
        assert_eq!(epoch, 0);
    }

    #[test]
    fn monotone_trace_selects_the_last_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = TrainState::new(dir.path());
        let mut net = UNet::new(UNetArch::new(1, 2, 2), 1);
        for (epoch, v) in [0.5, 0.4, 0.3].iter().enumerate() {
            state
                .record_epoch(
                    EpochTrace {
                        epoch,
                        sup_loss: 0.0,
                        unsup_loss: 0.0,
                        final_loss: 0.0,
                        val_sup: *v,
                        val_final: *v,
                        degenerate: false,
                        sup_steps: 1,
                        unsup_steps: 1,
                    },
                    &mut net,
                    "t",
                )
                .unwrap();
        }
        assert_eq!(select_checkpoint(&state, CheckpointPolicy::BestFinal).unwrap().0, 2);
    }

    #[test]
    fn empty_trace_selection_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let state = TrainState::new(dir.path());
        assert!(select_checkpoint(&state, CheckpointPolicy::BestFinal).is_err());
    }

    #[test]
    fn self_train_requires_aux_head_and_runs_without_masks() {
        let samples = generate_synthetic(SyntheticKind::TwoIntensity, 8, (32, 32), 9).unwrap();
        let (train, val): (Vec<_>, Vec<_>) =
            samples.into_iter().partition(|s| s.split == Split::Train);
        let mut cfg = PipelineConfig::self_defaults(DatasetRef::Synthetic {
            kind: SyntheticKind::TwoIntensity,
            n: 8,
            size: (32, 32),
        });
        cfg.epochs = 1;
        cfg.batch_size = 2;
        cfg.base_channels = 2;

        let dir = tempfile::tempdir().unwrap();
        let mut plain = UNet::new(UNetArch::new(1, 2, 2), 1);
        assert!(self_train(&mut plain, &train, &val, &cfg, dir.path()).is_err());

        let mut net = UNet::new(UNetArch::new(1, 2, 2).with_aux(4), 1);
        let state = self_train(&mut net, &train, &val, &cfg, dir.path()).unwrap();
        assert_eq!(state.traces.len(), 1);
        assert_eq!(state.traces[0].sup_steps, 0);
        assert!(state.traces[0].final_loss.is_finite());
    }

    #[test]
    fn forced_zero_rotation_pairs_identical_views() {
        let samples = generate_synthetic(SyntheticKind::TwoIntensity, 2, (32, 32), 9).unwrap();
        let mut cfg = PipelineConfig::self_defaults(DatasetRef::Synthetic {
            kind: SyntheticKind::TwoIntensity,
            n: 2,
            size: (32, 32),
        });
        cfg.base_channels = 2;
        let mut net = UNet::new(UNetArch::new(1, 2, 2).with_aux(4), 1);
        // At rotation 0 the pair is (x, x): the loss is the self-MI of the
        // prediction, and the step must run without error.
        let loss = self_pair_step(&mut net, &samples[0].image, 0.0, &cfg, 1.0).unwrap();
        assert!(loss.is_finite());
        assert!((-2.0 * (4.0f64).ln()..=1e-9).contains(&loss));
    }

    #[test]
    fn rmsprop_configuration_also_trains() {
        let (train, val) = tiny_data(12);
        let split = make_label_split(&train, 0.5, 2).unwrap();
        let cfg = desk_cfg(1);
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        let mut cfg2 = cfg.clone();
        cfg2.optimizer = OptimizerKind::RmsProp;
        let mut net = UNet::new(UNetArch::new(1, 2, 2), 1);
        let dir = tempfile::tempdir().unwrap();
        semi_train(&mut net, &split.quarantine(train), &val, &split, &cfg2, dir.path()).unwrap();
    }
}
