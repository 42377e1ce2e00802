//! Trains briefly, then reloads the stored checkpoint, evaluates it on the
//! test split, and renders difference panels (original | reference |
//! prediction | disagreement).
//!
//! ```text
//! cargo run --example evaluate -- [out_dir]
//! ```

use std::path::PathBuf;

use semiseg::config::{CheckpointPolicy, DatasetRef, Pipeline, PipelineConfig};
use semiseg::dataset::SyntheticKind;
use semiseg::experiment::{evaluate_checkpoint, prepare_data, render_reports, run_semi_cell};

fn main() -> semiseg::Result<()> {
    env_logger::init();
    let out: PathBuf =
        std::env::args().nth(1).map(Into::into).unwrap_or_else(|| "target/evaluate_demo".into());

    let mut cfg = PipelineConfig::semi_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::Blobs,
        n: 40,
        size: (64, 64),
    })
    .with_pipeline(Pipeline::P1);
    cfg.label_ratio = 0.25;
    cfg.epochs = 5;
    cfg.base_channels = 4;

    let data = prepare_data(&cfg)?;
    let run_dir = out.join("runs/eval_demo");
    run_semi_cell(&cfg, &[Pipeline::P1], &data, &run_dir)?;

    // Reload from disk, the way a separate evaluation process would.
    let ckpt = run_dir.join("checkpoints/best_supervised.ckpt");
    let report = evaluate_checkpoint(&ckpt, &data)?;
    println!("reloaded checkpoint: mean IoU {:.4}", report.mean_iou);
    for (class, iou) in &report.per_class_iou {
        println!("  class {class}: IoU {iou:.4}");
    }
    if let Some(bce) = report.bce {
        println!("  binary cross entropy {bce:.4}");
    }

    let panels = render_reports(&run_dir, &data, CheckpointPolicy::BestSupervised, 3)?;
    for p in panels {
        println!("wrote {}", p.display());
    }
    Ok(())
}
