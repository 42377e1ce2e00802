//! Acceptance suite: one test per criterion, each printing a PASS line.
//! Criteria 6 and 7 train at desk scale and take a few minutes each on a
//! 2-core CPU; everything else is fast. Criterion 10 needs the real PhC
//! dataset on disk and is ignored by default (see its doc comment).

mod common;

use common::oracles;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semiseg::augment::{apply_prediction, invert_prediction, AffineRecord, Interp};
use semiseg::config::{CheckpointPolicy, DatasetRef, Pipeline, PipelineConfig, UnsupLoss};
use semiseg::dataset::{generate_synthetic, make_label_split, Split, SyntheticKind};
use semiseg::experiment::{
    prepare_data, run_experiment, run_self_cell, run_semi_cell, self_run_dir, ExperimentMatrix,
};
use semiseg::grid::{Mask, SoftPrediction};
use semiseg::losses;
use semiseg::model::{UNet, UNetArch};
use semiseg::train::{select_checkpoint, semi_train};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

enum Validity {
    Full,
    Random,
}

struct RandomCase {
    k: usize,
    h: usize,
    w: usize,
    a: Array3<f64>,
    b: Array3<f64>,
    target: Array2<u8>,
    valid: Array2<bool>,
}

fn random_case(rng: &mut ChaCha8Rng, validity: Validity) -> RandomCase {
    let k = rng.gen_range(2..=3usize);
    let h = rng.gen_range(1..=4usize);
    let w = rng.gen_range(1..=4usize);
    let normalized = |rng: &mut ChaCha8Rng| {
        let mut arr = Array3::from_shape_fn((k, h, w), |_| rng.gen_range(0.05..1.0));
        for r in 0..h {
            for c in 0..w {
                let s: f64 = (0..k).map(|ch| arr[(ch, r, c)]).sum();
                for ch in 0..k {
                    arr[(ch, r, c)] /= s;
                }
            }
        }
        arr
    };
    let a = normalized(rng);
    let b = normalized(rng);
    let target = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..k as u8));
    let mut valid = match validity {
        Validity::Full => Array2::from_elem((h, w), true),
        Validity::Random => Array2::from_shape_fn((h, w), |_| rng.gen_bool(0.8)),
    };
    if valid.iter().all(|&v| !v) {
        valid[(0, 0)] = true;
    }
    RandomCase { k, h, w, a, b, target, valid }
}

fn to_nested(arr: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    let (k, h, w) = arr.dim();
    (0..k)
        .map(|ch| (0..h).map(|r| (0..w).map(|c| arr[(ch, r, c)]).collect()).collect())
        .collect()
}

fn valid_nested(valid: &Array2<bool>) -> Vec<Vec<bool>> {
    valid.outer_iter().map(|row| row.to_vec()).collect()
}

fn target_nested(target: &Array2<u8>) -> Vec<Vec<u8>> {
    target.outer_iter().map(|row| row.to_vec()).collect()
}

/// Criterion 1: Dice, KL, and mutual-information losses match independent
/// scalar-loop implementations on 1000 random small cases, within 1e-6.
#[test]
fn c1_loss_oracle_equivalence() {
    let started = std::time::Instant::now();
    let mut rng = rng(0xC1);
    for case_idx in 0..1000 {
        let case = random_case(&mut rng, Validity::Random);
        let pred = SoftPrediction::new(case.a.clone(), case.valid.clone()).unwrap();
        let other = SoftPrediction::new(case.b.clone(), case.valid.clone()).unwrap();
        let mask = Mask::new(case.target.clone());

        let a_nested = to_nested(&case.a);
        let b_nested = to_nested(&case.b);
        let v_nested = valid_nested(&case.valid);
        let t_nested = target_nested(&case.target);

        let dice = losses::dice_loss(&pred, &mask).unwrap().value;
        let dice_ref = oracles::dice_oracle(&a_nested, &t_nested, &v_nested);
        assert!((dice - dice_ref).abs() < 1e-6, "case {case_idx}: dice {dice} vs {dice_ref}");

        let kl = losses::kl_consistency(&pred, &other).unwrap().value;
        let kl_ref = oracles::kl_oracle(&a_nested, &b_nested, &v_nested);
        assert!((kl - kl_ref).abs() < 1e-6, "case {case_idx}: kl {kl} vs {kl_ref}");

        let iic = losses::iic_loss(&pred, &other).unwrap().value;
        let iic_ref = oracles::iic_oracle(&a_nested, &b_nested, &v_nested);
        assert!((iic - iic_ref).abs() < 1e-6, "case {case_idx}: iic {iic} vs {iic_ref}");
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "oracle sweep took {secs:.1} s");
    println!("ACCEPTANCE C1 PASS: 1000 random cases match scalar oracles within 1e-6 ({secs:.2} s)");
}

/// Criterion 2: analytic loss gradients match central finite differences
/// within 1e-3 relative error on 20 random small instances per loss.
#[test]
fn c2_gradient_checks() {
    let mut rng = rng(0xC2);
    let eps = 1e-6;
    let rel = |num: f64, ana: f64| (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);

    for instance in 0..20 {
        let case = random_case(&mut rng, Validity::Full);
        let mask = Mask::new(case.target.clone());

        // Dice: gradient with respect to the prediction.
        {
            let pred = SoftPrediction::new(case.a.clone(), case.valid.clone()).unwrap();
            let (_, grad) = losses::dice_loss_grad(&pred, &mask).unwrap();
            let mut probe = case.a.clone();
            for _ in 0..4 {
                let idx = (
                    rng.gen_range(0..case.k),
                    rng.gen_range(0..case.h),
                    rng.gen_range(0..case.w),
                );
                let base = probe[idx];
                probe[idx] = base + eps;
                let up = losses::dice_loss(
                    &SoftPrediction::new(probe.clone(), case.valid.clone()).unwrap(),
                    &mask,
                )
                .unwrap()
                .value;
                probe[idx] = base - eps;
                let down = losses::dice_loss(
                    &SoftPrediction::new(probe.clone(), case.valid.clone()).unwrap(),
                    &mask,
                )
                .unwrap()
                .value;
                probe[idx] = base;
                let numeric = (up - down) / (2.0 * eps);
                if numeric.abs() > 1e-10 || grad[idx].abs() > 1e-10 {
                    assert!(
                        rel(numeric, grad[idx]) < 1e-3,
                        "dice instance {instance}: {numeric} vs {}",
                        grad[idx]
                    );
                }
            }
        }

        // KL: gradient with respect to the student.
        {
            let target = SoftPrediction::new(case.a.clone(), case.valid.clone()).unwrap();
            let student = SoftPrediction::new(case.b.clone(), case.valid.clone()).unwrap();
            let (_, grad) = losses::kl_consistency_grad(&target, &student).unwrap();
            let mut probe = case.b.clone();
            for _ in 0..4 {
                let idx = (
                    rng.gen_range(0..case.k),
                    rng.gen_range(0..case.h),
                    rng.gen_range(0..case.w),
                );
                let base = probe[idx];
                let eval = |p: &Array3<f64>| {
                    losses::kl_consistency(
                        &target,
                        &SoftPrediction::new(p.clone(), case.valid.clone()).unwrap(),
                    )
                    .unwrap()
                    .value
                };
                probe[idx] = base + eps;
                let up = eval(&probe);
                probe[idx] = base - eps;
                let down = eval(&probe);
                probe[idx] = base;
                let numeric = (up - down) / (2.0 * eps);
                assert!(
                    rel(numeric, grad[idx]) < 1e-3,
                    "kl instance {instance}: {numeric} vs {}",
                    grad[idx]
                );
            }
        }

        // Mutual information: gradients with respect to both inputs.
        {
            let a = SoftPrediction::new(case.a.clone(), case.valid.clone()).unwrap();
            let b = SoftPrediction::new(case.b.clone(), case.valid.clone()).unwrap();
            let (_, ga, gb) = losses::iic_loss_grad(&a, &b).unwrap();
            for (side, grad) in [(0, &ga), (1, &gb)] {
                let mut probe = if side == 0 { case.a.clone() } else { case.b.clone() };
                for _ in 0..4 {
                    let idx = (
                        rng.gen_range(0..case.k),
                        rng.gen_range(0..case.h),
                        rng.gen_range(0..case.w),
                    );
                    let base = probe[idx];
                    let eval = |p: &Array3<f64>| {
                        let probed = SoftPrediction::new(p.clone(), case.valid.clone()).unwrap();
                        let (x, y) =
                            if side == 0 { (&probed, &b) } else { (&a, &probed) };
                        losses::iic_loss(x, y).unwrap().value
                    };
                    probe[idx] = base + eps;
                    let up = eval(&probe);
                    probe[idx] = base - eps;
                    let down = eval(&probe);
                    probe[idx] = base;
                    let numeric = (up - down) / (2.0 * eps);
                    if numeric.abs() > 1e-10 || grad[idx].abs() > 1e-10 {
                        assert!(
                            rel(numeric, grad[idx]) < 1e-3,
                            "iic side {side} instance {instance}: {numeric} vs {}",
                            grad[idx]
                        );
                    }
                }
            }
        }
    }
    println!("ACCEPTANCE C2 PASS: loss gradients match finite differences (20 instances each)");
}

/// Criterion 3: analytic mutual-information values — identity-paired
/// one-hot uniform gives -ln 2, independence gives 0, constant output 0.
#[test]
fn c3_iic_analytic_values() {
    // Identity-paired one-hot, classes split 50/50.
    let mask = Mask::new(Array2::from_shape_fn((4, 4), |(r, c)| ((r + c) % 2) as u8));
    let one_hot = SoftPrediction::one_hot(&mask, 2);
    let loss = losses::iic_loss(&one_hot, &one_hot.clone()).unwrap().value;
    assert!((loss + (2.0f64).ln()).abs() < 1e-4, "identity pairing: {loss}");

    // Independent uniform distributions.
    let uniform = SoftPrediction::all_valid(Array3::from_elem((2, 4, 4), 0.5));
    let loss = losses::iic_loss(&uniform, &uniform.clone()).unwrap().value;
    assert!(loss.abs() < 1e-4, "independent uniform: {loss}");

    // Degenerate collapse: one class everywhere.
    let constant = SoftPrediction::one_hot(&Mask::new(Array2::zeros((4, 4))), 2);
    let loss = losses::iic_loss(&constant, &constant.clone()).unwrap().value;
    assert!(loss.abs() < 1e-4, "constant output: {loss}");

    println!("ACCEPTANCE C3 PASS: -ln2 / 0 / 0 analytic values within 1e-4");
}

fn smooth_prediction(k: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> SoftPrediction {
    let phases: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| (rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28), rng.gen_range(0.5..1.5)))
        .collect();
    let mut probs = Array3::zeros((k, h, w));
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            for (ch, &(pr, pc, amp)) in phases.iter().enumerate() {
                let v = 1.0
                    + amp
                        * ((r as f64 / h as f64 * 3.0 + pr).sin()
                            * (c as f64 / w as f64 * 3.0 + pc).cos())
                    .abs();
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

/// Criterion 4: invert-after-apply deviates < 0.05 mean absolute
/// probability on valid pixels over 100 random records, and is exactly 0
/// for multiples of 90 degrees without scaling.
#[test]
fn c4_affine_round_trip() {
    let mut rng = rng(0xC4);
    for i in 0..100 {
        let record = AffineRecord {
            rotation_deg: rng.gen_range(0.0..360.0),
            scale: rng.gen_range(0.95..1.05),
            hflip: rng.gen_bool(0.5),
            interpolation: Interp::Bilinear,
        };
        let pred = smooth_prediction(2, 32, 32, &mut rng);
        let transformed = apply_prediction(&pred, &record).unwrap();
        let back = invert_prediction(&transformed, &record).unwrap();
        let mut err = 0.0;
        let mut n = 0usize;
        for ((ch, r, c), &v) in back.probs.indexed_iter() {
            if back.validity[(r, c)] {
                err += (v - pred.probs[(ch, r, c)]).abs();
                n += 1;
            }
        }
        let mean = err / n as f64;
        assert!(mean < 0.05, "record {i} ({record:?}): mean abs error {mean}");
    }

    for deg in [0.0, 90.0, 180.0, 270.0] {
        for hflip in [false, true] {
            let record = AffineRecord { rotation_deg: deg, scale: 1.0, hflip, interpolation: Interp::Bilinear };
            let pred = smooth_prediction(3, 24, 24, &mut rng);
            let transformed = apply_prediction(&pred, &record).unwrap();
            let back = invert_prediction(&transformed, &record).unwrap();
            let mut worst = 0.0f64;
            for ((ch, r, c), &v) in back.probs.indexed_iter() {
                assert!(back.validity[(r, c)]);
                worst = worst.max((v - pred.probs[(ch, r, c)]).abs());
            }
            assert_eq!(worst, 0.0, "rotation {deg} hflip {hflip} not exact");
        }
    }
    println!("ACCEPTANCE C4 PASS: round-trip < 0.05 mean abs over 100 records, exact at 90-degree multiples");
}

/// Criterion 5: with 25 labeled / 75 unlabeled at batch 1, one epoch runs
/// exactly 75 supervised and 75 unsupervised steps.
#[test]
fn c5_subset_looping_contract() {
    // 125 synthetic samples leave exactly 100 in the training split.
    let samples = generate_synthetic(SyntheticKind::Blobs, 125, (16, 16), 0xC5).unwrap();
    let (train, test): (Vec<_>, Vec<_>) =
        samples.into_iter().partition(|s| s.split == Split::Train);
    assert_eq!(train.len(), 100);
    let val: Vec<_> = test.into_iter().take(4).collect();

    let split = make_label_split(&train, 0.25, 1).unwrap();
    assert_eq!(split.labeled.len(), 25);
    assert_eq!(split.unlabeled.len(), 75);
    let train = split.quarantine(train);

    let mut cfg = PipelineConfig::semi_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::Blobs,
        n: 125,
        size: (16, 16),
    });
    cfg.epochs = 1;
    cfg.batch_size = 1;
    cfg.base_channels = 2;
    cfg.seed = 3;

    let mut net = UNet::new(UNetArch::new(1, 2, 2), cfg.seed);
    let dir = tempfile::tempdir().unwrap();
    let state = semi_train(&mut net, &train, &val, &split, &cfg, dir.path()).unwrap();
    assert_eq!(state.traces[0].sup_steps, 75, "supervised step count");
    assert_eq!(state.traces[0].unsup_steps, 75, "unsupervised step count");
    println!("ACCEPTANCE C5 PASS: 25/75 split at batch 1 runs exactly 75 + 75 steps per epoch");
}

fn desk_semi_config(ratio: f64) -> PipelineConfig {
    let mut cfg = PipelineConfig::semi_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::Blobs,
        n: 200,
        size: (128, 128),
    })
    .with_pipeline(Pipeline::P3);
    cfg.label_ratio = ratio;
    cfg.epochs = 20;
    cfg.base_channels = 4;
    cfg.seed = 7;
    cfg
}

/// Criterion 6: desk-scale semi-supervised training on synthetic blobs
/// (200 images, 128x128), ratio 10%, pipeline P3, 20 epochs reaches test
/// mean IoU >= 0.80 and lands within 0.10 of the fully-labeled run.
#[test]
fn c6_semi_supervised_desk_scale() {
    let started = std::time::Instant::now();

    let cfg10 = desk_semi_config(0.1);
    let data = prepare_data(&cfg10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome10 =
        run_semi_cell(&cfg10, &[Pipeline::P3], &data, &dir.path().join("r010")).unwrap();
    let iou10 = outcome10.results[0].2.mean_iou;
    assert!(iou10 >= 0.80, "mean IoU at 10% labels: {iou10:.4}");

    let cfg100 = desk_semi_config(1.0);
    let outcome100 =
        run_semi_cell(&cfg100, &[Pipeline::P3], &data, &dir.path().join("r100")).unwrap();
    let iou100 = outcome100.results[0].2.mean_iou;
    assert!(
        (iou10 - iou100).abs() <= 0.10,
        "10% labels {iou10:.4} vs 100% labels {iou100:.4}"
    );

    let mins = started.elapsed().as_secs_f64() / 60.0;
    assert!(mins <= 30.0, "training took {mins:.1} minutes");
    println!(
        "ACCEPTANCE C6 PASS: 10% labels mean IoU {iou10:.4}, 100% labels {iou100:.4}, {mins:.1} min"
    );
}

/// Criterion 7: desk-scale self-supervised training on the two-intensity
/// dataset (K=2, K_aux=4, 10 epochs) reaches matched mean IoU >= 0.70 via
/// max-overlap cluster assignment, without the degenerate flag at the
/// selected checkpoint.
#[test]
fn c7_self_supervised_desk_scale() {
    let mut cfg = PipelineConfig::self_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::TwoIntensity,
        n: 100,
        size: (64, 64),
    });
    cfg.epochs = 10;
    cfg.base_channels = 4;
    cfg.aux_classes = Some(4);
    cfg.seed = 11;

    let data = prepare_data(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run_dir = self_run_dir(dir.path(), &cfg);
    let outcome = run_self_cell(&cfg, &data, &run_dir).unwrap();

    let matched = outcome.aux_report.mean_iou;
    assert!(matched >= 0.70, "matched auxiliary-head mean IoU: {matched:.4}");
    assert!(
        !outcome.degenerate_at_selected,
        "degenerate flag set at selected checkpoint (epoch {})",
        outcome.selected_epoch
    );
    println!(
        "ACCEPTANCE C7 PASS: matched mean IoU {matched:.4} (main head {:.4}), no degenerate flag",
        outcome.main_report.mean_iou
    );
}

/// Criterion 8: checkpoint selection returns the argmin epoch per policy on
/// a scripted trace, and both pipeline pairs are retrievable from a single
/// training run of their loss.
#[test]
fn c8_checkpoint_policies() {
    use semiseg::train::{EpochTrace, TrainState};

    // Scripted trace.
    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::new(dir.path());
    let mut net = UNet::new(UNetArch::new(1, 2, 2), 1);
    let scripted = [(0.5, 0.9), (0.3, 0.8), (0.4, 0.2)];
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
                "scripted",
            )
            .unwrap();
    }
    assert_eq!(select_checkpoint(&state, CheckpointPolicy::BestSupervised).unwrap().0, 1);
    assert_eq!(select_checkpoint(&state, CheckpointPolicy::BestFinal).unwrap().0, 2);

    // One training run per loss yields both policies of its pair.
    let mut cfg = PipelineConfig::semi_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::Blobs,
        n: 16,
        size: (32, 32),
    });
    cfg.epochs = 2;
    cfg.base_channels = 2;
    cfg.seed = 2;
    let data = prepare_data(&cfg).unwrap();
    for (loss, pair) in [
        (UnsupLoss::KlDiv, [Pipeline::P1, Pipeline::P2]),
        (UnsupLoss::Iid, [Pipeline::P3, Pipeline::P4]),
    ] {
        let mut cfg = cfg.clone();
        cfg.unsup_loss = loss;
        let run_dir = dir.path().join(format!("{loss:?}"));
        let outcome = run_semi_cell(&cfg, &pair, &data, &run_dir).unwrap();
        assert_eq!(outcome.results.len(), 2);
        let (p_first, _, _) = &outcome.results[0];
        let (p_second, _, _) = &outcome.results[1];
        assert_eq!(*p_first, pair[0]);
        assert_eq!(*p_second, pair[1]);
    }
    println!("ACCEPTANCE C8 PASS: argmin selection per policy; P1/P2 and P3/P4 from single runs");
}

/// Criterion 9: the sweep emits a CSV isomorphic to the published table
/// block (rows = ratios, columns = P1..P4); the self-supervised run emits
/// the two-row head layout; reruns with fixed seeds are byte-identical.
#[test]
fn c9_report_shapes_and_determinism() {
    let mut base = PipelineConfig::semi_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::Blobs,
        n: 20,
        size: (32, 32),
    });
    base.epochs = 1;
    base.base_channels = 2;
    let matrix = ExperimentMatrix {
        pipelines: Pipeline::ALL.to_vec(),
        ratios: vec![0.1, 0.25, 0.5],
        seeds: vec![1],
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let summary_a = run_experiment(&base, &matrix, dir_a.path()).unwrap();
    let summary_b = run_experiment(&base, &matrix, dir_b.path()).unwrap();

    let text = std::fs::read_to_string(&summary_a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "dataset,ratio,P1,P2,P3,P4");
    assert_eq!(lines.len(), 4, "header plus one row per ratio:\n{text}");
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6);
        for v in &fields[2..] {
            assert!(v.parse::<f64>().is_ok(), "cell `{v}` in:\n{text}");
        }
    }
    assert_eq!(
        std::fs::read(&summary_a).unwrap(),
        std::fs::read(&summary_b).unwrap(),
        "summary.csv must be byte-identical across reruns"
    );

    // Self-supervised: two-row layout, also byte-identical.
    let mut self_cfg = PipelineConfig::self_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::TwoIntensity,
        n: 12,
        size: (32, 32),
    });
    self_cfg.epochs = 1;
    self_cfg.base_channels = 2;
    self_cfg.batch_size = 2;
    let data = prepare_data(&self_cfg).unwrap();
    let mut metric_bytes = Vec::new();
    for dir in [&dir_a, &dir_b] {
        let run_dir = self_run_dir(dir.path(), &self_cfg);
        run_self_cell(&self_cfg, &data, &run_dir).unwrap();
        let text = std::fs::read_to_string(run_dir.join("reports/metrics.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("head,"));
        assert!(lines[1].starts_with("auxiliary head,"));
        assert!(lines[2].starts_with("main head,"));
        metric_bytes.push(text);
    }
    assert_eq!(metric_bytes[0], metric_bytes[1]);
    println!("ACCEPTANCE C9 PASS: table-shaped sweep CSV and two-row self CSV, byte-identical reruns");
}

/// Criterion 10 (advisory, not CI-gated): with the public PhC dataset on
/// disk, pipeline P1 at 10% labels and 100 epochs should land within 0.10
/// of the published 0.9410 mean IoU. Run manually:
///
/// ```text
/// SEMISEG_PHC_ROOT=datasets/phc cargo test -p semiseg --test acceptance \
///     c10 -- --ignored --nocapture
/// ```
///
/// The dataset directory must follow the images/ + masks/ layout. This
/// trains the full-width network on 512x512 crops and takes many hours on
/// CPU; it is a manual reproduction target, not part of the gate.
#[test]
#[ignore = "requires the PhC dataset and hours of training; manual reproduction target"]
fn c10_phc_reproduction_advisory() {
    let root = match std::env::var("SEMISEG_PHC_ROOT") {
        Ok(r) => std::path::PathBuf::from(r),
        Err(_) => {
            println!("ACCEPTANCE C10 SKIP: set SEMISEG_PHC_ROOT to the PhC dataset directory");
            return;
        }
    };
    let mut cfg = PipelineConfig::semi_defaults(DatasetRef::Named {
        name: "phc".into(),
        root,
    })
    .with_pipeline(Pipeline::P1);
    cfg.label_ratio = 0.1;
    cfg.epochs = 100;
    cfg.seed = 7;

    let data = prepare_data(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_semi_cell(&cfg, &[Pipeline::P1], &data, &dir.path().join("phc")).unwrap();
    let iou = outcome.results[0].2.mean_iou;
    let reference = 0.9410;
    println!("ACCEPTANCE C10 (advisory): PhC P1 at 10% labels reached {iou:.4} (published {reference})");
    assert!((iou - reference).abs() <= 0.10, "out of the advisory band: {iou:.4}");
}
