//! Scratch driver for tuning the self-supervised run.

use semiseg::config::{DatasetRef, PipelineConfig};
use semiseg::dataset::SyntheticKind;
use semiseg::experiment::{prepare_data, run_self_cell};

fn main() -> semiseg::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let base: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(11);

    let mut cfg = PipelineConfig::self_defaults(DatasetRef::Synthetic {
        kind: SyntheticKind::TwoIntensity,
        n,
        size: (size, size),
    });
    cfg.base_channels = base;
    cfg.aux_classes = Some(4);
    cfg.seed = seed;

    let data = prepare_data(&cfg)?;
    let dir = tempfile::tempdir().map_err(semiseg::Error::Io)?;
    let out = run_self_cell(&cfg, &data, dir.path())?;
    for t in &out.state.traces {
        println!(
            "epoch {:>2}: loss {:+.4} val {:+.4} degenerate {}",
            t.epoch, t.unsup_loss, t.val_final, t.degenerate
        );
    }
    println!(
        "n={n} size={size} base={base} seed={seed}: aux matched {:.4}, main {:.4}, selected {} degen {}",
        out.aux_report.mean_iou, out.main_report.mean_iou, out.selected_epoch, out.degenerate_at_selected
    );
    Ok(())
}
