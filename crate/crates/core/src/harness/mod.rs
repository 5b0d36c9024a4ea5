//! Experiment orchestration: configs, the training loop, traces, equal
//! compute comparisons and plots.

mod compare;
mod config;
mod plot;
mod run;
mod suite;
mod trace;

pub use compare::{compare, ComparisonReport, RegimeComparison};
pub use config::{steps_to_match, CostUnits, DataSource, Regime, TrainConfig, OUT_ROOT_ENV};
pub use plot::{combined_csv, emit_plots, render_svg, Marker};
pub use run::{
    evaluate, load_data, run, train_step, RunOptions, RunOutcome, CHECKPOINT_FILE, CONFIG_FILE, COST_FILE, PLAN_FILE,
    TRACE_FILE,
};
pub use suite::{run_suite, RegimeVerdict, SeedResult, SuiteReport, SuiteSpec};
pub use trace::{format_cost, write_trace, RunTrace, TraceRow, TraceWriter, TRACE_HEADER};
