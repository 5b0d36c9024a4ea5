use std::fmt::Write as _;
use std::path::PathBuf;

use super::compare::{compare, RegimeComparison};
use super::config::{Regime, TrainConfig};
use super::run::{run, RunOptions};
use super::trace::RunTrace;
use crate::error::{bail, Result};

/// A baseline plus one incremental run per stage count, repeated per seed.
#[derive(Clone, Debug)]
pub struct SuiteSpec {
    /// Model, optimizer, batch and data settings shared by every run; its
    /// regime and output directory are replaced.
    pub template: TrainConfig,
    /// Baseline budget `T`; incremental runs use `T_inc = T`.
    pub steps: u64,
    pub stages: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out_root: PathBuf,
}

const DESK: &str = r#"
out_dir = "unused"
eval_every = 100

[model]
n_layers = 8
d_model = 128
n_heads = 4
context_len = 256

[batch]
batch_size = 32
seq_len = 256

[data]
synthetic_bytes = 10000000
synthetic_seed = 7
"#;

const REDUCED: &str = r#"
out_dir = "unused"
eval_every = 25

[model]
n_layers = 8
d_model = 32
n_heads = 4
context_len = 64

[batch]
batch_size = 8
seq_len = 64

[data]
synthetic_bytes = 1000000
synthetic_seed = 7
"#;

fn preset(text: &str, steps: u64, out_root: PathBuf) -> SuiteSpec {
    let full = format!("{text}\n[regime]\nkind = \"baseline\"\nsteps = {steps}\n");
    SuiteSpec {
        template: TrainConfig::from_toml(&full).expect("preset parses"),
        steps,
        stages: vec![2, 4, 8],
        seeds: vec![0, 1, 2],
        out_root,
    }
}

impl SuiteSpec {
    /// L=8, d=128, 4 heads, B=32, T_ctx=256, T=3000, S in {2, 4, 8},
    /// seeds 0..3, on 10 MB of synthetic text.
    pub fn desk(out_root: PathBuf) -> Self {
        preset(DESK, 3000, out_root)
    }

    /// Same shape as [`SuiteSpec::desk`] with d=32, B=8, T_ctx=64 and
    /// T=400: minutes instead of CPU-hours.
    pub fn reduced(out_root: PathBuf) -> Self {
        preset(REDUCED, 400, out_root)
    }

    fn config(&self, seed: u64, stages: Option<usize>) -> TrainConfig {
        let mut cfg = self.template.clone();
        cfg.seed = seed;
        let (regime, dir) = match stages {
            None => (Regime::Baseline { steps: self.steps }, format!("seed{seed}/baseline")),
            Some(s) => (
                Regime::Incremental {
                    stages: s,
                    inc_steps: self.steps,
                    cont_steps: None,
                    phase_split: "1/2".into(),
                },
                format!("seed{seed}/s{s}"),
            ),
        };
        cfg.regime = regime;
        cfg.out_dir = self.out_root.join(dir);
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub baseline_val_loss: f64,
    /// `(S, comparison)` per incremental regime.
    pub regimes: Vec<(usize, RegimeComparison)>,
}

/// Directional check for one stage count across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeVerdict {
    pub stages: usize,
    pub equal_compute_step: Option<u64>,
    pub mean_incremental: f64,
    pub mean_baseline: f64,
    /// Seeds where the baseline ends strictly below the incremental run.
    pub seeds_baseline_ahead: usize,
    pub seeds: usize,
}

impl RegimeVerdict {
    /// Mean incremental loss at least the mean baseline loss, and the
    /// baseline strictly ahead for a majority of seeds.
    pub fn holds(&self) -> bool {
        self.mean_incremental >= self.mean_baseline && 3 * self.seeds_baseline_ahead >= 2 * self.seeds
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub results: Vec<SeedResult>,
}

impl SuiteReport {
    pub fn verdicts(&self) -> Vec<RegimeVerdict> {
        let Some(first) = self.results.first() else {
            return Vec::new();
        };
        first
            .regimes
            .iter()
            .map(|(s, c)| {
                let mut inc = 0.0;
                let mut base = 0.0;
                let mut ahead = 0;
                for r in &self.results {
                    let v = r.regimes.iter().find(|(x, _)| x == s).and_then(|(_, c)| c.val_loss).unwrap_or(f64::NAN);
                    inc += v;
                    base += r.baseline_val_loss;
                    if r.baseline_val_loss < v {
                        ahead += 1;
                    }
                }
                let n = self.results.len() as f64;
                RegimeVerdict {
                    stages: *s,
                    equal_compute_step: c.equal_compute_step,
                    mean_incremental: inc / n,
                    mean_baseline: base / n,
                    seeds_baseline_ahead: ahead,
                    seeds: self.results.len(),
                }
            })
            .collect()
    }

    pub fn holds(&self) -> bool {
        let v = self.verdicts();
        !v.is_empty() && v.iter().all(RegimeVerdict::holds)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let _ = write!(s, "seed {}: baseline {:.4}", r.seed, r.baseline_val_loss);
            for (st, c) in &r.regimes {
                let _ = write!(s, "  S={st} {}", c.val_loss.map_or("-".into(), |v| format!("{v:.4}")));
            }
            s.push('\n');
        }
        for v in self.verdicts() {
            let _ = writeln!(
                s,
                "S={}: equal-compute step {}, mean val {:.4} vs baseline {:.4}, baseline ahead in {}/{} seeds -> {}",
                v.stages,
                v.equal_compute_step.map_or("-".into(), |x| x.to_string()),
                v.mean_incremental,
                v.mean_baseline,
                v.seeds_baseline_ahead,
                v.seeds,
                if v.holds() { "holds" } else { "does not hold" }
            );
        }
        s
    }
}

/// Runs (or resumes) every configuration of the suite in sequence.
pub fn run_suite(spec: &SuiteSpec, mut progress: impl FnMut(&str)) -> Result<SuiteReport> {
    if spec.seeds.is_empty() || spec.stages.is_empty() {
        bail!(Config, "suite needs at least one seed and one stage count");
    }
    let mut results = Vec::new();
    for &seed in &spec.seeds {
        let mut traces: Vec<(usize, RunTrace)> = Vec::new();
        let base_cfg = spec.config(seed, None);
        progress(&format!("seed {seed}: baseline"));
        let base = run(&base_cfg, RunOptions { resume: true, ..Default::default() })?.trace;
        for &s in &spec.stages {
            progress(&format!("seed {seed}: S={s}"));
            let out = run(&spec.config(seed, Some(s)), RunOptions { resume: true, ..Default::default() })?;
            traces.push((s, out.trace));
        }
        let named: Vec<(String, RunTrace)> = traces.iter().map(|(s, t)| (format!("S={s}"), t.clone())).collect();
        let rep = compare(&base, &named, spec.steps)?;
        let Some(baseline_val_loss) = rep.baseline_val_loss else {
            bail!(Data, "baseline for seed {seed} has no validation loss at step {}", spec.steps);
        };
        results.push(SeedResult {
            seed,
            baseline_val_loss,
            regimes: traces.iter().map(|(s, _)| *s).zip(rep.regimes).collect(),
        });
    }
    Ok(SuiteReport { results })
}
