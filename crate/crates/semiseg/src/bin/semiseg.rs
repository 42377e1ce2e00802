//! Thin command-line front end; all behavior lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semiseg::config::{CheckpointPolicy, KvConfig, Mode, Pipeline, PipelineConfig};
use semiseg::dataset::{self, CropMode};
use semiseg::error::{Error, Result};
use semiseg::experiment::{
    self, prepare_data, run_self_cell, run_semi_cell, ExperimentMatrix,
};

#[derive(Parser)]
#[command(name = "semiseg", about = "Semi- and self-supervised microscopy segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct ConfigArgs {
    /// Key-value config file (see the library docs for the schema).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset: phc|fluogfp|fluohoechst|bigbrain|synthetic:<kind>.
    #[arg(long)]
    dataset: Option<String>,
    /// Label ratio in (0, 1].
    #[arg(long)]
    ratio: Option<f64>,
    /// Training pipeline P1..P4.
    #[arg(long)]
    pipeline: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn build(&self, mode: &str) -> Result<PipelineConfig> {
        let mut kv = match &self.config {
            Some(path) => KvConfig::load(path)?,
            None => KvConfig::default(),
        };
        kv.set("mode", mode);
        if let Some(d) = &self.dataset {
            kv.set("dataset", d);
        }
        if let Some(r) = self.ratio {
            kv.set("label_ratio", r);
        }
        if let Some(p) = &self.pipeline {
            kv.set("pipeline", p);
        }
        if let Some(s) = self.seed {
            kv.set("seed", s);
        }
        if let Some(e) = self.epochs {
            kv.set("epochs", e);
        }
        kv.to_pipeline_config()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset to disk, or validate a named dataset's layout.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for synthetic datasets.
        #[arg(long, default_value = "datasets/synthetic")]
        out: PathBuf,
    },
    /// Train the semi-supervised pipeline once.
    TrainSemi {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory that receives runs/<name>/.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the self-supervised pipeline once.
    TrainSelf {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-evaluate a finished run's checkpoints on its test split.
    Eval {
        /// Run directory (out/runs/<name>).
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint policy to evaluate; default: the run's own.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Run the pipeline x ratio sweep and write summary.csv.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated pipelines (default P1,P2,P3,P4).
        #[arg(long)]
        pipelines: Option<String>,
        /// Comma-separated label ratios (default 0.1,0.25,0.5).
        #[arg(long)]
        ratios: Option<String>,
        /// Comma-separated seeds (default the --seed value or 0).
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rebuild summary.csv from existing run directories.
    Summarize {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render difference panels for a run's test samples.
    Render {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        policy: Option<String>,
        /// Number of test samples to render.
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
}

fn parse_policy(s: &str) -> Result<CheckpointPolicy> {
    match s {
        "best_supervised" => Ok(CheckpointPolicy::BestSupervised),
        "best_final" => Ok(CheckpointPolicy::BestFinal),
        other => Err(Error::Config(format!("unknown policy `{other}`"))),
    }
}

fn load_run_config(run: &std::path::Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(run.join("config.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("config.json: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { cfg, out } => {
            let cfg = cfg.build("semi")?;
            match &cfg.dataset {
                semiseg::config::DatasetRef::Synthetic { kind, n, size } => {
                    let samples =
                        dataset::generate_synthetic(*kind, *n, *size, experiment::DATA_SEED)?;
                    std::fs::create_dir_all(out.join("images"))?;
                    std::fs::create_dir_all(out.join("masks"))?;
                    for s in &samples {
                        dataset::io::write_gray_png(
                            &s.image,
                            &out.join(format!("images/{}.png", s.id)),
                        )?;
                        if let Some(m) = s.diagnostic_mask()? {
                            dataset::io::write_mask_png(
                                m,
                                &out.join(format!("masks/{}.png", s.id)),
                            )?;
                        }
                    }
                    println!("wrote {} samples to {}", samples.len(), out.display());
                }
                semiseg::config::DatasetRef::Named { name, root } => {
                    let spec = dataset::builtin_spec(name)
                        .ok_or_else(|| Error::Config(format!("unknown dataset `{name}`")))?;
                    let samples = dataset::load_dataset(root, &spec, CropMode::Semi)?;
                    let masked = samples.iter().filter(|s| s.mask.is_some()).count();
                    println!(
                        "{name}: {} samples ({masked} with masks) under {}",
                        samples.len(),
                        root.display()
                    );
                }
            }
        }
        Command::TrainSemi { cfg, out } => {
            let cfg = cfg.build("semi")?;
            let data = prepare_data(&cfg)?;
            let run_dir = out.join("runs").join(format!(
                "{}_{}_r{:03}_s{}",
                cfg.dataset.label().replace(':', "-"),
                match cfg.unsup_loss {
                    semiseg::config::UnsupLoss::KlDiv => "kldiv",
                    semiseg::config::UnsupLoss::Iid => "iid",
                },
                (cfg.label_ratio * 100.0).round() as u32,
                cfg.seed
            ));
            let pipelines: Vec<Pipeline> = Pipeline::ALL
                .into_iter()
                .filter(|p| p.unsup_loss() == cfg.unsup_loss)
                .collect();
            let outcome = run_semi_cell(&cfg, &pipelines, &data, &run_dir)?;
            for (pipeline, epoch, report) in &outcome.results {
                println!(
                    "{pipeline}: mean IoU {:.4} (checkpoint epoch {epoch})",
                    report.mean_iou
                );
            }
            println!("run directory: {}", outcome.run_dir.display());
        }
        Command::TrainSelf { cfg, out } => {
            let cfg = cfg.build("self")?;
            let data = prepare_data(&cfg)?;
            let run_dir = experiment::self_run_dir(&out, &cfg);
            let outcome = run_self_cell(&cfg, &data, &run_dir)?;
            println!("auxiliary head: mean IoU {:.4}", outcome.aux_report.mean_iou);
            println!("main head: mean IoU {:.4}", outcome.main_report.mean_iou);
            println!("run directory: {}", outcome.run_dir.display());
        }
        Command::Eval { run, policy } => {
            let cfg = load_run_config(&run)?;
            let data = prepare_data(&cfg)?;
            let policies = match (&policy, cfg.mode) {
                (Some(p), _) => vec![parse_policy(p)?],
                (None, Mode::Semi) => {
                    vec![CheckpointPolicy::BestSupervised, CheckpointPolicy::BestFinal]
                }
                (None, Mode::SelfSup) => vec![CheckpointPolicy::BestFinal],
            };
            for policy in policies {
                let ckpt = run.join("checkpoints").join(format!("{policy}.ckpt"));
                let report = experiment::evaluate_checkpoint(&ckpt, &data)?;
                println!(
                    "{policy}: mean IoU {:.4} (per-image {:.4}, {} samples)",
                    report.mean_iou, report.per_image_mean_iou, report.n_samples
                );
            }
        }
        Command::Sweep { cfg, pipelines, ratios, seeds, out } => {
            let base = cfg.clone().build("semi")?;
            let parse_list =
                |s: &str| -> Vec<String> { s.split(',').map(|t| t.trim().to_string()).collect() };
            let matrix = ExperimentMatrix {
                pipelines: match &pipelines {
                    None => Pipeline::ALL.to_vec(),
                    Some(s) => parse_list(s)
                        .iter()
                        .map(|t| t.parse())
                        .collect::<Result<Vec<_>>>()?,
                },
                ratios: match &ratios {
                    None => vec![0.1, 0.25, 0.5],
                    Some(s) => parse_list(s)
                        .iter()
                        .map(|t| {
                            t.parse::<f64>()
                                .map_err(|_| Error::Config(format!("bad ratio `{t}`")))
                        })
                        .collect::<Result<Vec<_>>>()?,
                },
                seeds: match &seeds {
                    None => vec![cfg.seed.unwrap_or(0)],
                    Some(s) => parse_list(s)
                        .iter()
                        .map(|t| {
                            t.parse::<u64>().map_err(|_| Error::Config(format!("bad seed `{t}`")))
                        })
                        .collect::<Result<Vec<_>>>()?,
                },
            };
            let summary = experiment::run_experiment(&base, &matrix, &out)?;
            println!("summary: {}", summary.display());
        }
        Command::Summarize { out } => {
            let summary = experiment::summarize(&out)?;
            println!("summary: {}", summary.display());
        }
        Command::Render { run, policy, count } => {
            let cfg = load_run_config(&run)?;
            let data = prepare_data(&cfg)?;
            let policy = match policy {
                Some(p) => parse_policy(&p)?,
                None => cfg.checkpoint_policy,
            };
            let paths = experiment::render_reports(&run, &data, policy, count)?;
            for p in &paths {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
