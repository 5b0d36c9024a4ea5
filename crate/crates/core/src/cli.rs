//! Command-line front end: `ingest`, `run`, `compare`, `plot`, `cost`.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::corpus::{ingest, synthetic, ingest_documents, write_stream, DocSplitting};
use crate::cost::{parse_rational, summarize, CostParams};
use crate::error::{Error, Result};
use crate::harness::{compare, emit_plots, run, Marker, RunOptions, RunTrace, TrainConfig};
use crate::numkernel::Precision;

#[derive(Parser, Debug)]
#[command(name = "layerwise", version, about = "Incremental layer-wise transformer training with exact cost accounting")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// Overrides the seed of the config or corpus split.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `fast32` or `verify64`.
    #[arg(long, global = true, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    Precision::parse(s).ok_or_else(|| format!("unknown precision {s:?}; use fast32 or verify64"))
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tokenize text files into train/val byte streams.
    Ingest(IngestArgs),
    /// Train one regime from a config file.
    Run(RunArgs),
    /// Equal-compute comparison of incremental traces against a baseline.
    Compare(CompareArgs),
    /// Loss curves with equal-compute markers as SVG plus CSV.
    Plot(PlotArgs),
    /// Closed-form costs for a layer/stage/step setting.
    Cost(CostArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Text files; each is cut into documents.
    pub paths: Vec<PathBuf>,
    /// Generate this many bytes of synthetic stories instead of reading files.
    #[arg(long)]
    pub synthetic_bytes: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// `paragraphs`, `lines` or `whole`.
    #[arg(long, default_value = "paragraphs")]
    pub split_by: String,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Meter cost only, without training.
    #[arg(long)]
    pub dry_run: bool,
    /// Stop after this many steps in total.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Print a progress line every N steps (0 for none).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    /// `name=path` or a bare path (the file stem becomes the name).
    #[arg(long = "incremental", required = true)]
    pub incremental: Vec<String>,
    #[arg(long)]
    pub baseline_steps: u64,
    /// Also write the report as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// `name=path` per series.
    #[arg(long = "trace", required = true)]
    pub traces: Vec<String>,
    /// Series holding the baseline; enables equal-compute markers.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub baseline_steps: Option<u64>,
    /// Output stem; `.svg` and `.csv` are appended.
    #[arg(long, default_value = "loss")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(long)]
    pub layers: usize,
    #[arg(long)]
    pub stages: usize,
    #[arg(long)]
    pub baseline_steps: String,
    /// Backward/forward cost ratio, e.g. `2` or `3/2`.
    #[arg(long, default_value = "1")]
    pub rho: String,
    #[arg(long, default_value = "1")]
    pub c: String,
    #[arg(long)]
    pub csv: bool,
}

fn named(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(spec);
            let stem = p.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
            (stem, p)
        }
    }
}

fn load_named(specs: &[String]) -> Result<Vec<(String, RunTrace)>> {
    specs
        .iter()
        .map(|s| {
            let (n, p) = named(s);
            Ok((n, RunTrace::read(&p)?))
        })
        .collect()
}

fn write_out(path: &std::path::Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(cli: Cli) -> Result<String> {
    let common = cli.common;
    match cli.command {
        Command::Ingest(a) => {
            let out = common.out.unwrap_or_else(|| PathBuf::from("data"));
            let seed = common.seed.unwrap_or(0);
            let how = DocSplitting::parse(&a.split_by).ok_or_else(|| Error::Config(format!("unknown --split-by {:?}", a.split_by)))?;
            let (train, val) = match a.synthetic_bytes {
                Some(n) => ingest_documents(&synthetic::documents_with_size(seed, n), a.val_fraction, seed)?,
                None if a.paths.is_empty() => return Err(Error::Config("ingest needs input files or --synthetic-bytes".into())),
                None => ingest(&a.paths, a.val_fraction, seed, how)?,
            };
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_stream(&train, &out.join("train.bin"))?;
            write_stream(&val, &out.join("val.bin"))?;
            Ok(format!(
                "train: {} tokens, {} documents, digest {}\nval: {} tokens, {} documents, digest {}\n",
                train.len(),
                train.documents,
                train.digest(),
                val.len(),
                val.documents,
                val.digest()
            ))
        }
        Command::Run(a) => {
            let mut cfg = TrainConfig::load(&a.config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(p) = common.precision {
                cfg.model.precision = p;
            }
            if let Some(o) = common.out {
                cfg.out_dir = o;
            }
            let log_every = a.log_every;
            let mut log = |r: &crate::harness::TraceRow| {
                if log_every > 0 && r.step % log_every == 0 {
                    let v = r.val_loss.map(|v| format!(" val {v:.4}")).unwrap_or_default();
                    let t = r.train_loss.map(|v| format!(" train {v:.4}")).unwrap_or_default();
                    eprintln!("step {} [{}]{t}{v}", r.step, r.mode);
                }
            };
            let outcome = run(
                &cfg,
                RunOptions {
                    resume: a.resume,
                    stop_after: a.stop_after,
                    dry_run: a.dry_run,
                    on_row: Some(&mut log),
                },
            )?;
            Ok(format!(
                "{} of {} steps done{}; cumulative cost {}; trace {}\n",
                outcome.steps_done,
                outcome.total_steps,
                outcome.resumed_from.map(|s| format!(" (resumed at {s})")).unwrap_or_default(),
                crate::harness::format_cost(outcome.final_cost),
                outcome.trace_path().display()
            ))
        }
        Command::Compare(a) => {
            let base = RunTrace::read(&a.baseline)?;
            let incs = load_named(&a.incremental)?;
            let rep = compare(&base, &incs, a.baseline_steps)?;
            if let Some(p) = &a.csv {
                write_out(p, &rep.to_csv())?;
            }
            Ok(rep.to_text())
        }
        Command::Plot(a) => {
            let series = load_named(&a.traces)?;
            let mut markers = Vec::new();
            if let (Some(b), Some(t)) = (&a.baseline, a.baseline_steps) {
                let base = series
                    .iter()
                    .find(|(n, _)| n == b)
                    .ok_or_else(|| Error::Config(format!("no series named {b}")))?;
                let others: Vec<(String, RunTrace)> = series.iter().filter(|(n, _)| n != b).cloned().collect();
                for r in compare(&base.1, &others, t)?.regimes {
                    if let (Some(step), Some(loss)) = (r.equal_compute_step, r.val_loss) {
                        markers.push(Marker { series: r.name, step, loss });
                    }
                }
            }
            let dir = common.out.unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let (csv, svg) = emit_plots(&series, &markers, &dir.join(&a.name))?;
            Ok(format!("wrote {} and {} ({} markers)\n", svg.display(), csv.display(), markers.len()))
        }
        Command::Cost(a) => {
            let p = CostParams::new(a.layers, a.stages)?
                .with_c(parse_rational(&a.c)?)?
                .with_rho(parse_rational(&a.rho)?)?;
            let s = summarize(&p, parse_rational(&a.baseline_steps)?)?;
            Ok(if a.csv { s.to_csv() } else { s.to_text() })
        }
    }
}

/// Parses `args`, runs the command and returns the process exit status.
/// Usage errors exit with 2; library errors with their class code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
