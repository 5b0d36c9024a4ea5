//! Baseline against incremental training with S in {2, 4, 8} over three
//! seeds, each incremental run judged at its equal-compute point.
//!
//! cargo run --release --example desk_experiment -- [reduced|desk] [out_dir]
//!
//! `desk` (L=8, d=128, B=32, T_ctx=256, T=3000) takes tens of CPU-hours on a
//! single core; `reduced` finishes in a few minutes. Every run resumes from
//! its checkpoint, so an interrupted suite picks up where it stopped.

use std::path::PathBuf;

use layerwise::harness::{run_suite, SuiteSpec};

fn main() -> layerwise::Result<()> {
    let scale = std::env::args().nth(1).unwrap_or_else(|| "reduced".into());
    let out = PathBuf::from(std::env::args().nth(2).unwrap_or_else(|| format!("runs/{scale}")));
    let spec = match scale.as_str() {
        "desk" => SuiteSpec::desk(out),
        "reduced" => SuiteSpec::reduced(out),
        other => {
            eprintln!("unknown scale {other:?}; use reduced or desk");
            std::process::exit(2);
        }
    };
    let report = run_suite(&spec, |msg| eprintln!("{msg}"))?;
    print!("{}", report.to_text());
    println!("directional finding {}", if report.holds() { "reproduced" } else { "not reproduced" });
    Ok(())
}
