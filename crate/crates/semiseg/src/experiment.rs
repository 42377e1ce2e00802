//! Experiment orchestration: data preparation, single runs, the
//! pipeline x label-ratio sweep, and report emission.
//!
//! Run directory layout: `runs/<name>/{config.json, norm_stats.txt,
//! traces.csv, checkpoints/, reports/}`. The sweep summary (`summary.csv`)
//! has one row per (dataset, ratio) with one column per pipeline, and is
//! reconstructible from the run directories alone via [`summarize`].
//!
//! Pipelines sharing an unsupervised loss (P1/P2, P3/P4) differ only in
//! checkpoint policy, so one training run serves both: each sweep training
//! covers a loss, and every requested pipeline of that loss is evaluated
//! from its corresponding checkpoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{CheckpointPolicy, DatasetRef, Mode, Pipeline, PipelineConfig, UnsupLoss};
use crate::dataset::{
    self, assign_splits, generate_synthetic, load_dataset, make_label_split, CropMode,
    ImageSample, NormStats, Split,
};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::grid::Mask;
use crate::model::{checkpoint, UNet, UNetArch};
use crate::rng::rng_for;
use crate::train::{self, select_checkpoint, TrainState, NORM_STATS_FILE};

/// Seed for dataset synthesis and train/val/test partitioning, independent
/// of the per-run seed so every cell of a sweep sees identical data.
pub const DATA_SEED: u64 = 0xD47A_5EED;

/// Normalized, split-assigned samples ready for training and evaluation.
pub struct PreparedData {
    pub train: Vec<ImageSample>,
    pub val: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
    pub stats: NormStats,
    pub n_classes: usize,
    pub in_channels: usize,
}

/// Loads or synthesizes the configured dataset, assigns train/val/test
/// splits, and normalizes by training-set statistics.
pub fn prepare_data(cfg: &PipelineConfig) -> Result<PreparedData> {
    let (samples, n_classes) = match &cfg.dataset {
        DatasetRef::Synthetic { kind, n, size } => {
            (generate_synthetic(*kind, *n, *size, DATA_SEED)?, 2)
        }
        DatasetRef::Named { name, root } => {
            let spec = dataset::builtin_spec(name)
                .ok_or_else(|| Error::Config(format!("unknown dataset `{name}`")))?;
            let mode = match cfg.mode {
                Mode::Semi => CropMode::Semi,
                Mode::SelfSup => CropMode::SelfSup,
            };
            let samples = load_dataset(root, &spec, mode)?;
            let samples = assign_splits(samples, cfg.test_frac, 0.0, DATA_SEED);
            (samples, spec.class_count)
        }
    };

    // Carve validation out of the training split, before label-ratio
    // splitting ever sees it.
    let mut samples = samples;
    let mut train_idx: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    {
        use rand::seq::SliceRandom;
        train_idx.shuffle(&mut rng_for(DATA_SEED, &[0x7A1]));
    }
    let n_val = (cfg.val_frac * train_idx.len() as f64).round() as usize;
    for &i in train_idx.iter().take(n_val) {
        samples[i].split = Split::Val;
    }

    let in_channels = samples
        .first()
        .map(|s| s.image.channels())
        .ok_or_else(|| Error::Data("no samples found".into()))?;

    let (train, rest): (Vec<_>, Vec<_>) =
        samples.into_iter().partition(|s| s.split == Split::Train);
    let (train, rest, stats) = dataset::normalize(train, rest)?;
    let (val, test): (Vec<_>, Vec<_>) = rest.into_iter().partition(|s| s.split == Split::Val);

    Ok(PreparedData { train, val, test, stats, n_classes, in_channels })
}

fn net_arch(cfg: &PipelineConfig, data: &PreparedData) -> UNetArch {
    let mut arch = UNetArch::new(data.in_channels, cfg.base_channels, data.n_classes);
    if cfg.mode == Mode::SelfSup {
        arch = arch.with_aux(cfg.aux_classes.unwrap_or(2 * data.n_classes));
    }
    arch
}

fn write_run_config(run_dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(run_dir)?;
    let json = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Data(format!("config encode: {e}")))?;
    std::fs::write(run_dir.join("config.json"), json)?;
    Ok(())
}

/// Predicted hard masks and ground truth for a sample list.
fn predict_masks(net: &UNet, samples: &[ImageSample]) -> Result<(Vec<Mask>, Vec<Mask>, Vec<Mask>)> {
    let mut main_preds = Vec::with_capacity(samples.len());
    let mut aux_preds = Vec::new();
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        let gt = s
            .diagnostic_mask()?
            .ok_or_else(|| Error::Data(format!("sample {} has no reference mask", s.id)))?
            .clone();
        let (main, aux) = net.predict(&s.image)?;
        main_preds.push(main.argmax_mask());
        if let Some(aux) = aux {
            aux_preds.push(aux.argmax_mask());
        }
        gts.push(gt);
    }
    Ok((main_preds, aux_preds, gts))
}

/// Mean binary cross entropy of the main head over a sample list (binary
/// tasks only).
fn mean_bce(net: &UNet, samples: &[ImageSample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut acc = 0.0;
    for s in samples {
        let Some(gt) = s.diagnostic_mask()? else { return Ok(None) };
        let (main, _) = net.predict(&s.image)?;
        if main.n_classes() != 2 || gt.max_class().unwrap_or(0) > 1 {
            return Ok(None);
        }
        acc += eval::bce_report(&main, gt)?;
    }
    Ok(Some(acc / samples.len() as f64))
}

/// Evaluates a stored checkpoint's main head against the test split.
pub fn evaluate_checkpoint(ckpt_path: &Path, data: &PreparedData) -> Result<MetricsReport> {
    let (net, _) = checkpoint::load(ckpt_path)?;
    let (preds, _, gts) = predict_masks(&net, &data.test)?;
    let classes: Vec<u8> = (0..data.n_classes as u8).collect();
    let mut report = eval::mean_iou(&preds, &gts, &classes)?;
    report.bce = mean_bce(&net, &data.test)?;
    Ok(report)
}

/// One semi-supervised training covering every requested pipeline of its
/// unsupervised loss.
pub struct SemiCellOutcome {
    pub run_dir: PathBuf,
    pub state: TrainState,
    /// (pipeline, selected epoch, test metrics), in pipeline order.
    pub results: Vec<(Pipeline, usize, MetricsReport)>,
}

/// Trains one (loss, ratio, seed) cell and evaluates the checkpoints of the
/// requested pipelines.
pub fn run_semi_cell(
    cfg: &PipelineConfig,
    pipelines: &[Pipeline],
    data: &PreparedData,
    run_dir: &Path,
) -> Result<SemiCellOutcome> {
    debug_assert!(pipelines.iter().all(|p| p.unsup_loss() == cfg.unsup_loss));
    write_run_config(run_dir, cfg)?;
    data.stats.save(&run_dir.join(NORM_STATS_FILE))?;

    let split = make_label_split(&data.train, cfg.label_ratio, cfg.seed)?;
    let train = split.quarantine(data.train.clone());

    let mut net = UNet::new(net_arch(cfg, data), cfg.seed);
    let state = train::semi_train(&mut net, &train, &data.val, &split, cfg, run_dir)?;

    let mut results = Vec::new();
    for &pipeline in pipelines {
        let (epoch, ckpt) = select_checkpoint(&state, pipeline.checkpoint_policy())?;
        let report = evaluate_checkpoint(&ckpt, data)?;
        results.push((pipeline, epoch, report));
    }
    write_semi_metrics(run_dir, cfg, &results)?;
    Ok(SemiCellOutcome { run_dir: run_dir.to_path_buf(), state, results })
}

fn write_semi_metrics(
    run_dir: &Path,
    cfg: &PipelineConfig,
    results: &[(Pipeline, usize, MetricsReport)],
) -> Result<()> {
    let reports = run_dir.join("reports");
    std::fs::create_dir_all(&reports)?;
    let mut text =
        String::from("dataset,ratio,pipeline,mean_iou,per_image_mean_iou,selected_epoch\n");
    for (pipeline, epoch, report) in results {
        text.push_str(&format!(
            "{},{:.2},{},{:.4},{:.4},{}\n",
            cfg.dataset.label(),
            cfg.label_ratio,
            pipeline,
            report.mean_iou,
            report.per_image_mean_iou,
            epoch
        ));
    }
    std::fs::write(reports.join("metrics.csv"), text)?;
    Ok(())
}

/// Self-supervised run results: main head evaluated directly, auxiliary
/// head after max-overlap cluster matching.
pub struct SelfCellOutcome {
    pub run_dir: PathBuf,
    pub state: TrainState,
    pub main_report: MetricsReport,
    pub aux_report: MetricsReport,
    pub selected_epoch: usize,
    pub degenerate_at_selected: bool,
}

pub fn run_self_cell(
    cfg: &PipelineConfig,
    data: &PreparedData,
    run_dir: &Path,
) -> Result<SelfCellOutcome> {
    write_run_config(run_dir, cfg)?;
    data.stats.save(&run_dir.join(NORM_STATS_FILE))?;

    let mut net = UNet::new(net_arch(cfg, data), cfg.seed);
    // Masks play no role in training; quarantine them all the same.
    let split = make_label_split(&data.train, 1.0, cfg.seed)?;
    let hidden = crate::dataset::LabelSplit {
        labeled: vec![],
        unlabeled: split.labeled,
        ratio: 1.0,
        seed: cfg.seed,
    };
    let train = hidden.quarantine(data.train.clone());
    let state = train::self_train(&mut net, &train, &data.val, cfg, run_dir)?;

    let (selected_epoch, ckpt) = select_checkpoint(&state, CheckpointPolicy::BestFinal)?;
    let degenerate_at_selected = state.traces[selected_epoch].degenerate;
    let (net, _) = checkpoint::load(&ckpt)?;
    let (main_preds, aux_preds, gts) = predict_masks(&net, &data.test)?;
    let classes: Vec<u8> = (0..data.n_classes as u8).collect();

    let mut main_report = eval::mean_iou(&main_preds, &gts, &classes)?;
    main_report.bce = mean_bce(&net, &data.test)?;

    let k_aux = net.arch.aux_classes.expect("self mode has an aux head");
    let assignment = eval::match_clusters(&aux_preds, &gts, k_aux, data.n_classes);
    let remapped: Vec<Mask> =
        aux_preds.iter().map(|m| eval::apply_assignment(m, &assignment)).collect();
    let mut aux_report = eval::mean_iou(&remapped, &gts, &classes)?;
    aux_report.assignment = Some(assignment);

    write_self_metrics(run_dir, cfg, &aux_report, &main_report)?;
    Ok(SelfCellOutcome {
        run_dir: run_dir.to_path_buf(),
        state,
        main_report,
        aux_report,
        selected_epoch,
        degenerate_at_selected,
    })
}

fn write_self_metrics(
    run_dir: &Path,
    cfg: &PipelineConfig,
    aux: &MetricsReport,
    main: &MetricsReport,
) -> Result<()> {
    let reports = run_dir.join("reports");
    std::fs::create_dir_all(&reports)?;
    let mut text = format!("head,{}\n", cfg.dataset.label());
    text.push_str(&format!("auxiliary head,{:.4}\n", aux.mean_iou));
    text.push_str(&format!("main head,{:.4}\n", main.mean_iou));
    std::fs::write(reports.join("metrics.csv"), text)?;
    Ok(())
}

/// The pipeline x ratio x seed sweep description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub pipelines: Vec<Pipeline>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl ExperimentMatrix {
    pub fn full(seeds: Vec<u64>) -> Self {
        Self { pipelines: Pipeline::ALL.to_vec(), ratios: vec![0.1, 0.25, 0.5], seeds }
    }
}

fn semi_run_dir(out_dir: &Path, cfg: &PipelineConfig) -> PathBuf {
    let loss = match cfg.unsup_loss {
        UnsupLoss::KlDiv => "kldiv",
        UnsupLoss::Iid => "iid",
    };
    let label = cfg.dataset.label().replace(':', "-");
    out_dir.join("runs").join(format!(
        "{label}_{loss}_r{:03}_s{}",
        (cfg.label_ratio * 100.0).round() as u32,
        cfg.seed
    ))
}

pub fn self_run_dir(out_dir: &Path, cfg: &PipelineConfig) -> PathBuf {
    let label = cfg.dataset.label().replace(':', "-");
    out_dir.join("runs").join(format!("{label}_self_s{}", cfg.seed))
}

/// Runs the sweep. Failed cells are recorded and the sweep continues;
/// an error is returned only when every cell failed.
pub fn run_experiment(base: &PipelineConfig, matrix: &ExperimentMatrix, out_dir: &Path) -> Result<PathBuf> {
    if matrix.pipelines.is_empty() || matrix.ratios.is_empty() || matrix.seeds.is_empty() {
        return Err(Error::Config("experiment matrix must not be empty".into()));
    }
    let data = prepare_data(base)?;

    let mut losses_wanted: BTreeMap<String, (UnsupLoss, Vec<Pipeline>)> = BTreeMap::new();
    for &p in &matrix.pipelines {
        let key = format!("{:?}", p.unsup_loss());
        let entry = losses_wanted.entry(key).or_insert((p.unsup_loss(), Vec::new()));
        if !entry.1.contains(&p) {
            entry.1.push(p);
        }
    }

    let mut any_ok = false;
    let mut any_ran = false;
    for &seed in &matrix.seeds {
        for &ratio in &matrix.ratios {
            for (loss, pipelines) in losses_wanted.values() {
                let mut cfg = base.clone();
                cfg.mode = Mode::Semi;
                cfg.unsup_loss = *loss;
                cfg.label_ratio = ratio;
                cfg.seed = seed;
                let run_dir = semi_run_dir(out_dir, &cfg);
                any_ran = true;
                match run_semi_cell(&cfg, pipelines, &data, &run_dir) {
                    Ok(_) => any_ok = true,
                    Err(e) => {
                        log::error!("cell {} failed: {e}", run_dir.display());
                        let reports = run_dir.join("reports");
                        std::fs::create_dir_all(&reports)?;
                        std::fs::write(reports.join("status.txt"), format!("failed: {e}\n"))?;
                    }
                }
            }
        }
    }
    if any_ran && !any_ok {
        return Err(Error::AllCellsFailed);
    }
    summarize(out_dir)
}

#[derive(Debug, Default, Clone)]
struct SummaryCell {
    value: Option<f64>,
    failed: bool,
}

/// Rebuilds `summary.csv` (and the bar-chart data files) from the run
/// directories alone.
pub fn summarize(out_dir: &Path) -> Result<PathBuf> {
    let runs_dir = out_dir.join("runs");
    // (dataset, ratio-string, pipeline) -> cell
    let mut cells: BTreeMap<(String, String, Pipeline), SummaryCell> = BTreeMap::new();
    let mut run_dirs: Vec<PathBuf> = Vec::new();
    if runs_dir.is_dir() {
        for entry in std::fs::read_dir(&runs_dir)? {
            let path = entry?.path();
            if path.is_dir() {
                run_dirs.push(path);
            }
        }
    }
    run_dirs.sort();

    for run_dir in &run_dirs {
        let metrics = run_dir.join("reports").join("metrics.csv");
        if !metrics.is_file() {
            if run_dir.join("reports").join("status.txt").is_file() {
                // Failed cell: leave the row marked from the config echo.
                if let Ok(text) = std::fs::read_to_string(run_dir.join("config.json")) {
                    if let Ok(cfg) = serde_json::from_str::<PipelineConfig>(&text) {
                        if cfg.mode == Mode::Semi {
                            for p in [Pipeline::P1, Pipeline::P2, Pipeline::P3, Pipeline::P4] {
                                if p.unsup_loss() == cfg.unsup_loss {
                                    cells
                                        .entry((
                                            cfg.dataset.label(),
                                            format!("{:.2}", cfg.label_ratio),
                                            p,
                                        ))
                                        .or_default()
                                        .failed = true;
                                }
                            }
                        }
                    }
                }
            }
            continue;
        }
        let text = std::fs::read_to_string(&metrics)?;
        let mut lines = text.lines();
        let Some(header) = lines.next() else { continue };
        if !header.starts_with("dataset,") {
            continue; // self-supervised metrics have their own layout
        }
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 4 {
                continue;
            }
            let Ok(pipeline) = fields[2].parse::<Pipeline>() else { continue };
            let Ok(value) = fields[3].parse::<f64>() else { continue };
            cells.insert(
                (fields[0].to_string(), fields[1].to_string(), pipeline),
                SummaryCell { value: Some(value), failed: false },
            );
        }
    }

    // Table layout: rows = ratios, columns = pipelines, block per dataset.
    let mut text = String::from("dataset,ratio,P1,P2,P3,P4\n");
    let mut row_keys: Vec<(String, String)> =
        cells.keys().map(|(d, r, _)| (d.clone(), r.clone())).collect();
    row_keys.sort();
    row_keys.dedup();
    for (dataset, ratio) in &row_keys {
        text.push_str(&format!("{dataset},{ratio}"));
        for pipeline in Pipeline::ALL {
            match cells.get(&(dataset.clone(), ratio.clone(), pipeline)) {
                Some(SummaryCell { value: Some(v), .. }) => text.push_str(&format!(",{v:.4}")),
                Some(SummaryCell { failed: true, .. }) => text.push_str(",failed"),
                _ => text.push(','),
            }
        }
        text.push('\n');
    }
    std::fs::create_dir_all(out_dir)?;
    let summary = out_dir.join("summary.csv");
    std::fs::write(&summary, &text)?;

    // Bar-chart data: one file per dataset, long format.
    let mut by_dataset: BTreeMap<String, String> = BTreeMap::new();
    for ((dataset, ratio, pipeline), cell) in &cells {
        if let Some(v) = cell.value {
            by_dataset
                .entry(dataset.clone())
                .or_insert_with(|| String::from("ratio,pipeline,mean_iou\n"))
                .push_str(&format!("{ratio},{pipeline},{v:.4}\n"));
        }
    }
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    for (dataset, content) in by_dataset {
        std::fs::write(plots.join(format!("bars_{}.csv", dataset.replace(':', "-"))), content)?;
    }
    Ok(summary)
}

/// Renders difference panels for the first `count` test samples of a run.
pub fn render_reports(
    run_dir: &Path,
    data: &PreparedData,
    policy: CheckpointPolicy,
    count: usize,
) -> Result<Vec<PathBuf>> {
    let ckpt = run_dir.join("checkpoints").join(format!("{policy}.ckpt"));
    let (net, _) = checkpoint::load(&ckpt)?;
    let mut out = Vec::new();
    for s in data.test.iter().take(count) {
        let Some(gt) = s.diagnostic_mask()? else { continue };
        let (pred, _) = net.predict(&s.image)?;
        let path = run_dir.join("reports").join(format!("diff_{}.png", s.id));
        eval::render_diff(&pred.argmax_mask(), gt, &s.image, &path)?;
        out.push(path);
    }
    Ok(out)
}
