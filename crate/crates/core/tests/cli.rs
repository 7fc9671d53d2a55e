//! End-to-end checks of the command-line binary: artifact determinism,
//! ablation flags, JSON shapes, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_viforecast"))
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let base = r#"
[model]
preset = "tiny"

[optim]
base_lr = 1e-3
warmup_steps = 2
total_steps = 4
batch_size = 2

[data]
horizon_multipliers = [1]
lambda_max = 2

[[synth]]
name = "sines"
frequency = "H"
period = 24
steps = 400
train_end = 320
seed = 11
variates = [
  { kind = "sinusoid", period = 24, amp = 1.0, phase = 0.0, noise_std = 0.05 },
  { kind = "sinusoid", period = 24, amp = 0.7, phase = 1.3, noise_std = 0.05 },
]

[[protocol]]
dataset = "sines"
context_len = 96
horizon = 24
stride = 24
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

fn check(output: &Output) -> &Output {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(root).unwrap().display().to_string();
                entries.push((name, std::fs::read(&path).unwrap()));
            }
        }
    }
    entries.sort();
    entries
}

fn synth(config: &Path, seed: u64, out: &Path) {
    check(
        &bin()
            .args(["--config", config.to_str().unwrap(), "--seed", &seed.to_string(), "synth"])
            .args(["--out", out.to_str().unwrap()])
            .output()
            .unwrap(),
    );
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&config, 7, &a);
    synth(&config, 7, &b);
    synth(&config, 8, &c);
    assert_eq!(read_tree(&a), read_tree(&b));
    assert_ne!(read_tree(&a), read_tree(&c));
    assert!(a.join("sines/data.csv").is_file());
    assert!(a.join("sines/meta.json").is_file());
}

#[test]
fn pretrain_writes_checkpoint_and_trace() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "");
    let arch = tmp.path().join("arch");
    synth(&config, 7, &arch);
    let ck = tmp.path().join("ck.bin");
    let trace = tmp.path().join("trace.csv");
    check(
        &bin()
            .args(["--config", config.to_str().unwrap(), "--seed", "7", "pretrain"])
            .args(["--archive", arch.to_str().unwrap()])
            .args(["--out", ck.to_str().unwrap()])
            .args(["--trace", trace.to_str().unwrap()])
            .output()
            .unwrap(),
    );
    assert!(ck.is_file());
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = trace_text.lines();
    assert_eq!(lines.next().unwrap(), "step,loss,l_0.25,l_0.5,l_0.75,reject_rate");
    assert_eq!(lines.count(), 4);
}

#[test]
fn pretrain_heads_flag_controls_checkpoint_architecture() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "");
    let arch = tmp.path().join("arch");
    synth(&config, 7, &arch);
    let ck = tmp.path().join("one.bin");
    check(
        &bin()
            .args(["--config", config.to_str().unwrap(), "--seed", "7", "pretrain"])
            .args(["--archive", arch.to_str().unwrap()])
            .args(["--out", ck.to_str().unwrap()])
            .args(["--heads", "1"])
            .output()
            .unwrap(),
    );
    // The manifest is plain JSON after a fixed-size preamble.
    let bytes = std::fs::read(&ck).unwrap();
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest: serde_json::Value = serde_json::from_slice(&bytes[16..16 + manifest_len]).unwrap();
    assert_eq!(manifest["model"]["h"], 1);
}

#[test]
fn forecast_emits_quantile_tracks() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "");
    let arch = tmp.path().join("arch");
    synth(&config, 7, &arch);
    let ck = tmp.path().join("ck.bin");
    check(
        &bin()
            .args(["--config", config.to_str().unwrap(), "--seed", "7", "pretrain"])
            .args(["--archive", arch.to_str().unwrap()])
            .args(["--out", ck.to_str().unwrap()])
            .output()
            .unwrap(),
    );
    let json_path = tmp.path().join("fc.json");
    let png_path = tmp.path().join("fc.png");
    check(
        &bin()
            .args(["forecast", "--checkpoint", ck.to_str().unwrap()])
            .args(["--archive", arch.to_str().unwrap()])
            .args(["--dataset", "sines", "--context-len", "96", "--horizon", "24"])
            .args(["--out", json_path.to_str().unwrap()])
            .args(["--plot", png_path.to_str().unwrap()])
            .output()
            .unwrap(),
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(parsed["levels"], serde_json::json!([0.25, 0.5, 0.75]));
    assert_eq!(parsed["per_head"].as_array().unwrap().len(), 3);
    assert_eq!(parsed["per_head"][0].as_array().unwrap().len(), 24);
    assert_eq!(parsed["per_head"][0][0].as_array().unwrap().len(), 2);
    assert_eq!(parsed["point"].as_array().unwrap().len(), 24);
    // PNG magic bytes.
    let png = std::fs::read(&png_path).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
}

#[test]
fn evaluate_reports_protocol_metrics() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "");
    let arch = tmp.path().join("arch");
    synth(&config, 7, &arch);
    let ck = tmp.path().join("ck.bin");
    check(
        &bin()
            .args(["--config", config.to_str().unwrap(), "--seed", "7", "pretrain"])
            .args(["--archive", arch.to_str().unwrap()])
            .args(["--out", ck.to_str().unwrap()])
            .output()
            .unwrap(),
    );
    let out = check(
        &bin()
            .args(["--config", config.to_str().unwrap(), "evaluate"])
            .args(["--checkpoint", ck.to_str().unwrap()])
            .args(["--archive", arch.to_str().unwrap()])
            .output()
            .unwrap(),
    )
    .stdout
    .clone();
    let parsed: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert!(parsed["datasets"]["sines"]["metrics"]["mae"].is_number());
    assert_eq!(parsed["datasets"]["sines"]["windows"], 3);
    assert!(parsed["aggregate"]["normalized_mae"].is_number());
}

#[test]
fn unknown_config_key_exits_with_usage_error() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "[optim]\nlerning_rate = 1.0\n").unwrap();
    let out = bin()
        .args(["--config", config.to_str().unwrap(), "synth"])
        .args(["--out", tmp.path().join("x").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lerning_rate"), "stderr must name the bad key: {stderr}");
}

#[test]
fn missing_inputs_exit_with_data_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "");
    let arch = tmp.path().join("arch");
    synth(&config, 7, &arch);
    let out = bin()
        .args(["forecast", "--checkpoint", tmp.path().join("nope.bin").to_str().unwrap()])
        .args(["--archive", arch.to_str().unwrap()])
        .args(["--dataset", "sines", "--context-len", "96", "--horizon", "24"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.bin"), "stderr must name the missing file: {stderr}");
}
