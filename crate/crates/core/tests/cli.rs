use std::fs;
use std::process::Command;

use tempfile::tempdir;

fn layerwise(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_layerwise")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cost_prints_closed_form_summary() {
    let (code, out, _) = layerwise(&["cost", "--layers", "12", "--stages", "4", "--baseline-steps", "10000"]);
    assert_eq!(code, 0);
    assert!(out.contains("C_baseline = 240000"), "{out}");
    assert!(out.contains("C_incremental = 127500"), "{out}");
    assert!(out.contains("equal_compute_step = 14688"), "{out}");
}

#[test]
fn cost_handles_other_backward_ratios_and_rejects_zero_stages() {
    let (code, out, err) = layerwise(&["cost", "--layers", "12", "--stages", "4", "--baseline-steps", "10000", "--rho", "2"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("C_baseline = 360000"), "{out}");
    assert!(out.contains("equal_compute_step = 15000"), "{out}");
    let (code, _, _) = layerwise(&["cost", "--layers", "12", "--stages", "0", "--baseline-steps", "100"]);
    assert_eq!(code, 3);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(layerwise(&["cost", "--bogus"]).0, 2);
    assert_eq!(layerwise(&["frobnicate"]).0, 2);
    assert_eq!(layerwise(&["--help"]).0, 0);
}

#[test]
fn run_with_missing_config_fails() {
    let (code, _, err) = layerwise(&["run", "--config", "/no/such/file.toml"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn ingest_then_dry_run_then_compare() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let text = d.join("corpus.txt");
    fs::write(&text, "one paragraph here\n\nanother one\n\nand a third\n\nfourth\n").unwrap();
    let data = d.join("data");
    let (code, out, err) = layerwise(&["ingest", text.to_str().unwrap(), "--out", data.to_str().unwrap(), "--val-fraction", "0.3"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("train:"));
    assert!(data.join("train.bin").exists() && data.join("val.bin").exists());

    let cfg = d.join("run.toml");
    fs::write(
        &cfg,
        "out_dir = \"x\"\n[model]\nn_layers = 4\nd_model = 8\nn_heads = 2\ncontext_len = 8\n[batch]\nbatch_size = 1\nseq_len = 8\n\
         [data]\nsynthetic_bytes = 1000\n[regime]\nkind = \"baseline\"\nsteps = 50\n",
    )
    .unwrap();
    let base = d.join("base");
    let (code, _, err) = layerwise(&["run", "--config", cfg.to_str().unwrap(), "--dry-run", "--out", base.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let trace = base.join("trace.csv");
    let t = trace.to_str().unwrap();
    let (code, out, err) = layerwise(&["compare", "--baseline", t, "--incremental", &format!("same={t}"), "--baseline-steps", "50"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("same"), "{out}");

    let (code, out, err) = layerwise(&["plot", "--trace", &format!("base={t}"), "--name", "curves", "--out", d.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("curves.svg"));
    assert!(d.join("curves.csv").exists());
}
