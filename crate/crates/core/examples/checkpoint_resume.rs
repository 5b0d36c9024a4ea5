//! Interrupts a run part-way, resumes it from its last checkpoint and checks
//! the trace against an uninterrupted run byte for byte.
//!
//! cargo run --release --example checkpoint_resume -- [out_dir]

use std::fs;
use std::path::{Path, PathBuf};

use layerwise::harness::{run, RunOptions, TrainConfig, TRACE_FILE};

fn config(out: &Path) -> layerwise::Result<TrainConfig> {
    TrainConfig::from_toml(&format!(
        r#"
out_dir = "{}"
eval_every = 10
checkpoint_every = 15

[model]
n_layers = 4
d_model = 16
n_heads = 2
context_len = 32

[batch]
batch_size = 4
seq_len = 32

[data]
synthetic_bytes = 100000

[regime]
kind = "incremental"
stages = 4
inc_steps = 80
"#,
        out.display()
    ))
}

fn main() -> layerwise::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/checkpoint_resume".into()));
    let whole = run(&config(&root.join("whole"))?, RunOptions::default())?;
    let cfg = config(&root.join("interrupted"))?;
    let first = run(&cfg, RunOptions { stop_after: Some(50), ..Default::default() })?;
    println!("stopped after {} of {} steps", first.steps_done, first.total_steps);
    let second = run(&cfg, RunOptions { resume: true, ..Default::default() })?;
    println!("resumed at step {:?}, finished {} steps", second.resumed_from, second.steps_done);
    let a = fs::read(whole.out_dir.join(TRACE_FILE)).map_err(|e| layerwise::Error::io(&whole.out_dir, e))?;
    let b = fs::read(second.out_dir.join(TRACE_FILE)).map_err(|e| layerwise::Error::io(&second.out_dir, e))?;
    println!("traces identical: {}", a == b);
    Ok(())
}
