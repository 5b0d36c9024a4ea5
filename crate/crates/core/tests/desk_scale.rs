//! Full desk-scale comparison: tens of CPU-hours on one core.
//!
//! cargo test --release --test desk_scale -- --ignored
//!
//! Runs resume from their checkpoints under `$LAYERWISE_OUT/desk-suite`, so
//! the suite can be stopped and restarted.

use std::path::PathBuf;

use layerwise::harness::{run_suite, SuiteSpec, OUT_ROOT_ENV};

#[test]
#[ignore = "tens of CPU-hours"]
fn incremental_trails_baseline_at_equal_compute() {
    let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")), PathBuf::from);
    let report = run_suite(&SuiteSpec::desk(root.join("desk-suite")), |m| eprintln!("{m}")).unwrap();
    println!("{}", report.to_text());
    assert!(report.holds(), "{}", report.to_text());
}
