//! Trains a small baseline and a 2-stage incremental run on the same data,
//! then compares them at the equal-compute step and plots both curves.
//!
//! cargo run --release --example train_compare -- [out_dir]

use std::path::{Path, PathBuf};

use layerwise::harness::{compare, emit_plots, run, Marker, RunOptions, TrainConfig};

fn config(out: &Path, regime: &str) -> layerwise::Result<TrainConfig> {
    TrainConfig::from_toml(&format!(
        r#"
seed = 1
out_dir = "{}"
eval_every = 20
val_batches = 4

[model]
n_layers = 4
d_model = 32
n_heads = 4
context_len = 64

[batch]
batch_size = 8
seq_len = 64

[data]
synthetic_bytes = 400000

[regime]
{regime}
"#,
        out.display()
    ))
}

fn main() -> layerwise::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/train_compare".into()));
    let steps = 200;
    let base = run(&config(&root.join("baseline"), &format!("kind = \"baseline\"\nsteps = {steps}"))?, RunOptions::default())?;
    let inc = run(
        &config(&root.join("s2"), &format!("kind = \"incremental\"\nstages = 2\ninc_steps = {steps}"))?,
        RunOptions::default(),
    )?;
    let series = vec![("baseline".to_string(), base.trace.clone()), ("s2".to_string(), inc.trace)];
    let report = compare(&base.trace, &series[1..], steps)?;
    print!("{}", report.to_text());
    let markers: Vec<Marker> = report
        .regimes
        .iter()
        .filter_map(|r| Some(Marker { series: r.name.clone(), step: r.equal_compute_step?, loss: r.val_loss? }))
        .collect();
    let (csv, svg) = emit_plots(&series, &markers, &root.join("loss"))?;
    println!("wrote {} and {}", svg.display(), csv.display());
    Ok(())
}
