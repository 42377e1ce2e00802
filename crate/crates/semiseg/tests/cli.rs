//! End-to-end checks of the command-line interface: verbs, artifacts, and
//! exit codes (0 success, 2 config error, 3 data error, 4 all cells failed).

use std::path::Path;
use std::process::Command;

fn semiseg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semiseg"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const TINY: &str = "
dataset = synthetic:blobs
data.n = 16
data.size = 32
epochs = 1
model.base_channels = 2
seed = 3
";

#[test]
fn prepare_writes_the_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let status = semiseg()
        .args(["prepare", "--dataset", "synthetic:blobs", "--out"])
        .arg(&out)
        .args(["--config"])
        .arg(write_config(dir.path(), "data.n = 5\ndata.size = 32\n"))
        .status()
        .unwrap();
    assert!(status.success());
    let images = std::fs::read_dir(out.join("images")).unwrap().count();
    let masks = std::fs::read_dir(out.join("masks")).unwrap().count();
    assert_eq!(images, 5);
    assert_eq!(masks, 5);
}

#[test]
fn train_eval_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");

    let output = semiseg()
        .args(["train-semi", "--ratio", "0.25", "--pipeline", "P1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("mean IoU"), "{stdout}");

    let run_dir = out.join("runs/synthetic-blobs_kldiv_r025_s3");
    for artifact in [
        "config.json",
        "traces.csv",
        "norm_stats.txt",
        "reports/metrics.csv",
        "checkpoints/best_supervised.ckpt",
        "checkpoints/best_final.ckpt",
    ] {
        assert!(run_dir.join(artifact).is_file(), "missing {artifact}");
    }

    // traces.csv carries the documented columns.
    let traces = std::fs::read_to_string(run_dir.join("traces.csv")).unwrap();
    assert!(traces
        .starts_with("epoch,sup_loss,unsup_loss,final_loss,val_sup,val_final,degenerate_flag"));

    let output = semiseg().args(["eval", "--run"]).arg(&run_dir).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("best_supervised") && stdout.contains("best_final"), "{stdout}");

    let output = semiseg()
        .args(["render", "--count", "2", "--run"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    let rendered = std::fs::read_dir(run_dir.join("reports"))
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().map(|x| x == "png").unwrap_or(false)
        })
        .count();
    assert_eq!(rendered, 2);
}

#[test]
fn train_self_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "
        dataset = synthetic:two-intensity
        data.n = 12
        data.size = 32
        epochs = 1
        batch_size = 2
        model.base_channels = 2
        model.aux_classes = 4
        seed = 5
        ",
    );
    let out = dir.path().join("out");
    let output = semiseg()
        .args(["train-self", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("auxiliary head") && stdout.contains("main head"), "{stdout}");
}

#[test]
fn sweep_single_cell_and_idempotent_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let status = semiseg()
        .args(["sweep", "--pipelines", "P3", "--ratios", "0.5", "--seeds", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let summary = out.join("summary.csv");
    let text = std::fs::read_to_string(&summary).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "single-cell sweep yields one row:\n{text}");
    assert_eq!(lines[0], "dataset,ratio,P1,P2,P3,P4");

    // summarize rebuilds the identical file from run directories.
    let before = std::fs::read(&summary).unwrap();
    std::fs::remove_file(&summary).unwrap();
    let status = semiseg().args(["summarize", "--out"]).arg(&out).status().unwrap();
    assert!(status.success());
    assert_eq!(before, std::fs::read(&summary).unwrap());
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown config key: exit 2.
    let bad_cfg = write_config(dir.path(), "definitely_not_a_key = 1\n");
    let status = semiseg()
        .args(["train-semi", "--config"])
        .arg(&bad_cfg)
        .arg("--out")
        .arg(dir.path().join("o1"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Out-of-range value: exit 2.
    let status = semiseg()
        .args(["train-semi", "--ratio", "1.5", "--dataset", "synthetic:blobs"])
        .arg("--out")
        .arg(dir.path().join("o2"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Missing named dataset directory: exit 3.
    let cfg = write_config(dir.path(), "dataset = phc\ndata.root = /nonexistent/phc\n");
    let status = semiseg()
        .args(["train-semi", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o3"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    // Every sweep cell fails (ratio rounds to zero labels): exit 4.
    let cfg = write_config(dir.path(), TINY);
    let status = semiseg()
        .args(["sweep", "--pipelines", "P1", "--ratios", "0.01", "--seeds", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o4"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}
