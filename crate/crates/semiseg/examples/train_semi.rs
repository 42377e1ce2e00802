//! Desk-scale semi-supervised run: synthetic blobs, 10% labels, a narrow
//! backbone, and a handful of epochs. Prints the loss trace and the test
//! mean IoU of both checkpoint policies.
//!
//! ```text
//! cargo run --example train_semi -- [out_dir]
//! ```

use std::path::PathBuf;

use semiseg::config::{DatasetRef, Pipeline, PipelineConfig};
use semiseg::dataset::SyntheticKind;
use semiseg::experiment::{prepare_data, run_semi_cell};

fn main() -> semiseg::Result<()> {
    env_logger::init();
    let out: PathBuf =
        std::env::args().nth(1).map(Into::into).unwrap_or_else(|| "target/train_semi_demo".into());

    let mut cfg = PipelineConfig::semi_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::Blobs,
        n: 60,
        size: (64, 64),
    })
    .with_pipeline(Pipeline::P3);
    cfg.label_ratio = 0.1;
    cfg.epochs = 8;
    cfg.base_channels = 4;
    cfg.seed = 7;

    let data = prepare_data(&cfg)?;
    println!(
        "data: {} train / {} val / {} test",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );

    let run_dir = out.join("runs/demo");
    let outcome = run_semi_cell(&cfg, &[Pipeline::P3, Pipeline::P4], &data, &run_dir)?;

    println!("\nepoch  sup      unsup    val_sup  val_final");
    for t in &outcome.state.traces {
        println!(
            "{:>5}  {:.4}  {:.4}  {:.4}  {:.4}",
            t.epoch, t.sup_loss, t.unsup_loss, t.val_sup, t.val_final
        );
    }
    println!();
    for (pipeline, epoch, report) in &outcome.results {
        println!(
            "{pipeline}: test mean IoU {:.4} (per-image {:.4}), checkpoint epoch {epoch}",
            report.mean_iou, report.per_image_mean_iou
        );
    }
    println!("\nartifacts in {}", run_dir.display());
    Ok(())
}
