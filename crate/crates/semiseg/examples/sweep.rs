//! Tiny pipeline x label-ratio sweep on synthetic data, printing the
//! resulting summary table.
//!
//! ```text
//! cargo run --example sweep -- [out_dir]
//! ```

use std::path::PathBuf;

use semiseg::config::{DatasetRef, Pipeline, PipelineConfig};
use semiseg::dataset::SyntheticKind;
use semiseg::experiment::{run_experiment, ExperimentMatrix};

fn main() -> semiseg::Result<()> {
    env_logger::init();
    let out: PathBuf =
        std::env::args().nth(1).map(Into::into).unwrap_or_else(|| "target/sweep_demo".into());

    let mut base = PipelineConfig::semi_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::Blobs,
        n: 30,
        size: (32, 32),
    });
    base.epochs = 2;
    base.base_channels = 2;

    let matrix = ExperimentMatrix {
        pipelines: Pipeline::ALL.to_vec(),
        ratios: vec![0.1, 0.25, 0.5],
        seeds: vec![1],
    };
    let summary = run_experiment(&base, &matrix, &out)?;
    println!("{}", std::fs::read_to_string(&summary)?);
    println!("summary: {}", summary.display());
    println!("bar-chart data under {}", out.join("plots").display());
    Ok(())
}
