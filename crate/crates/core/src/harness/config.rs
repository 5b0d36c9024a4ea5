use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::BatchSpec;
use crate::cost::{parse_rational, CostParams, Rational};
use crate::error::{bail, Error, Result};
use crate::model::ModelConfig;
use crate::optim::AdamWConfig;
use crate::schedule::{BaselinePlan, Schedule, StagePlan};

/// Output paths are resolved under this directory when it is set and the
/// configured path is relative.
pub const OUT_ROOT_ENV: &str = "LAYERWISE_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Drives model initialization and batch order.
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_val_batches")]
    pub val_batches: usize,
    /// 0 writes a checkpoint only at the end.
    #[serde(default)]
    pub checkpoint_every: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: AdamWConfig,
    pub batch: BatchSpec,
    pub data: DataSource,
    pub regime: Regime,
    #[serde(default)]
    pub cost: CostUnits,
}

fn default_eval_every() -> u64 {
    100
}

fn default_val_batches() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    /// Streams written by `ingest`.
    Files { train: PathBuf, val: PathBuf },
    /// Generated story corpus, split in memory.
    Synthetic {
        synthetic_bytes: usize,
        #[serde(default)]
        synthetic_seed: u64,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
}

fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Regime {
    Baseline {
        steps: u64,
    },
    Incremental {
        stages: usize,
        inc_steps: u64,
        /// Defaults to the fewest steps that reach the cost of a baseline
        /// run over `inc_steps`.
        #[serde(default)]
        cont_steps: Option<u64>,
        #[serde(default = "default_split")]
        phase_split: String,
    },
}

fn default_split() -> String {
    "1/2".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostUnits {
    pub c: String,
    pub rho: String,
}

impl Default for CostUnits {
    fn default() -> Self {
        CostUnits {
            c: "1".into(),
            rho: "1".into(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.batch.validate()?;
        if self.eval_every == 0 {
            bail!(Config, "eval_every must be at least 1");
        }
        if self.val_batches == 0 {
            bail!(Config, "val_batches must be at least 1");
        }
        if self.batch.seq_len > self.model.context_len {
            bail!(Config, "seq_len {} exceeds context_len {}", self.batch.seq_len, self.model.context_len);
        }
        if let DataSource::Synthetic { synthetic_bytes, val_fraction, .. } = self.data {
            if synthetic_bytes == 0 || !(val_fraction > 0.0 && val_fraction < 1.0) {
                bail!(Config, "synthetic data needs positive size and val_fraction in (0, 1)");
            }
        }
        self.cost_params()?;
        self.schedule()?;
        Ok(())
    }

    pub fn stages(&self) -> usize {
        match self.regime {
            Regime::Baseline { .. } => 1,
            Regime::Incremental { stages, .. } => stages,
        }
    }

    pub fn cost_params(&self) -> Result<CostParams> {
        CostParams::new(self.model.n_layers, self.stages())?
            .with_c(parse_rational(&self.cost.c)?)?
            .with_rho(parse_rational(&self.cost.rho)?)
    }

    pub fn schedule(&self) -> Result<Schedule> {
        match &self.regime {
            Regime::Baseline { steps } => Ok(Schedule::Baseline(BaselinePlan::new(self.model.n_layers, *steps)?)),
            Regime::Incremental {
                stages,
                inc_steps,
                cont_steps,
                phase_split,
            } => {
                let split = parse_rational(phase_split)?;
                let probe = StagePlan::build(self.model.n_layers, *stages, *inc_steps, 0, split)?;
                let cont = match cont_steps {
                    Some(c) => *c,
                    None => steps_to_match(&probe, &self.cost_params()?),
                };
                Ok(Schedule::Incremental(StagePlan::build(self.model.n_layers, *stages, *inc_steps, cont, split)?))
            }
        }
    }

    /// `out_dir`, placed under `$LAYERWISE_OUT` when that is set and the
    /// path is relative.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) if self.out_dir.is_relative() => PathBuf::from(root).join(&self.out_dir),
            _ => self.out_dir.clone(),
        }
    }

    /// Step (1-based) at which the metered cost first reaches a baseline run
    /// over the incremental budget. `None` for baselines.
    pub fn equal_compute_step(&self) -> Result<Option<u64>> {
        match self.schedule()? {
            Schedule::Baseline(_) => Ok(None),
            Schedule::Incremental(plan) => {
                let p = self.cost_params()?;
                Ok(Some(plan.inc_steps() + steps_to_match(&plan, &p)))
            }
        }
    }
}

/// Fewest continual steps after which the plan's metered cost (one token per
/// step) reaches a baseline over `inc_steps` steps.
pub fn steps_to_match(plan: &StagePlan, p: &CostParams) -> u64 {
    use crate::schedule::{Mode, StepDirective};
    let inc: Rational = plan
        .bounds()
        .iter()
        .map(|b| {
            let m = plan.layers_per_stage();
            let p1 = Rational::from_integer((b.phase2_start - b.start) as i128);
            let p2 = Rational::from_integer((b.end - b.phase2_start) as i128);
            p1 * p.per_token(&StepDirective::phase1(b.stage, m)) + p2 * p.per_token(&StepDirective::phase2(b.stage, m))
        })
        .sum();
    let target = crate::cost::baseline_cost(p, Rational::from_integer(plan.inc_steps() as i128));
    let per_step = p.per_token(&StepDirective::full(Mode::Continual, plan.layers()));
    let gap = target - inc;
    if gap <= Rational::from_integer(0) {
        return 0;
    }
    (gap / per_step).ceil().to_integer() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
out_dir = "runs/s4"
eval_every = 50

[model]
n_layers = 12
d_model = 16
n_heads = 2
context_len = 32

[batch]
batch_size = 2
seq_len = 16

[data]
synthetic_bytes = 20000

[regime]
kind = "incremental"
stages = 4
inc_steps = 10000
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = TrainConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.val_batches, 8);
        assert_eq!(cfg.optim, AdamWConfig::default());
        assert_eq!(cfg.equal_compute_step().unwrap(), Some(14_688));
        assert_eq!(cfg.schedule().unwrap().total_steps(), 14_688);
        let again = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn equal_compute_steps_for_published_stage_counts() {
        for (layers, stages, want) in [(12, 4, 14_688), (24, 8, 15_469), (12, 12, 15_729)] {
            let text = SAMPLE.replace("n_layers = 12", &format!("n_layers = {layers}")).replace("stages = 4", &format!("stages = {stages}"));
            let cfg = TrainConfig::from_toml(&text).unwrap();
            assert_eq!(cfg.equal_compute_step().unwrap(), Some(want), "S={stages}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            SAMPLE.replace("stages = 4", "stages = 5"),
            SAMPLE.replace("eval_every = 50", "eval_every = 0"),
            SAMPLE.replace("seed = 3", "seed = 3\nbogus = 1"),
            SAMPLE.replace("seq_len = 16", "seq_len = 64"),
        ] {
            assert!(matches!(TrainConfig::from_toml(&bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
