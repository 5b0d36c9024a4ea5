use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use super::config::{DataSource, TrainConfig};
use super::trace::{RunTrace, TraceRow, TraceWriter};
use crate::checkpoint::{self, RunState};
use crate::corpus::{fixed_batches, ingest_documents, read_stream, synthetic, Batcher, TokenStream, TrainingBatch};
use crate::cost::{CostLedger, Rational};
use crate::error::{bail, Error, Result};
use crate::model::{backward, forward, init_model, BackwardSpec, ModelConfig, ParameterStore};
use crate::numkernel::{cross_entropy_logits, Precision, Scalar};
use crate::optim::{self, register_new_groups, AdamWConfig, OptState};
use crate::schedule::{Schedule, StepDirective};

pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const PLAN_FILE: &str = "plan.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const COST_FILE: &str = "cost.csv";

/// Knobs that change how a run executes, not what it computes.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Continue from the checkpoint in the output directory, if one exists.
    pub resume: bool,
    /// Return after this many steps, as if the process had been killed.
    pub stop_after: Option<u64>,
    /// Meter cost only; no model is built and loss columns stay empty.
    pub dry_run: bool,
    pub on_row: Option<&'a mut dyn FnMut(&TraceRow)>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub trace: RunTrace,
    pub steps_done: u64,
    pub total_steps: u64,
    pub resumed_from: Option<u64>,
    pub final_cost: Rational,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.steps_done == self.total_steps
    }

    pub fn trace_path(&self) -> PathBuf {
        self.out_dir.join(TRACE_FILE)
    }
}

/// Train and validation streams named by the config.
pub fn load_data(cfg: &TrainConfig) -> Result<(TokenStream, TokenStream)> {
    match &cfg.data {
        DataSource::Files { train, val } => Ok((read_stream(train)?, read_stream(val)?)),
        DataSource::Synthetic {
            synthetic_bytes,
            synthetic_seed,
            val_fraction,
        } => {
            let docs = synthetic::documents_with_size(*synthetic_seed, *synthetic_bytes);
            let (train, val) = ingest_documents(&docs, *val_fraction, *synthetic_seed)?;
            if val.is_empty() {
                bail!(Data, "synthetic corpus produced no validation documents");
            }
            Ok((train, val))
        }
    }
}

/// Mean loss over `batches` at `depth`.
pub fn evaluate<F: Scalar>(store: &ParameterStore<F>, batches: &[TrainingBatch], depth: usize) -> Result<f64> {
    let mut sum = 0.0;
    for b in batches {
        let (logits, _) = forward(store, &b.inputs, depth)?;
        sum += cross_entropy_logits(&logits, &b.targets.ids)?.loss;
    }
    Ok(sum / batches.len() as f64)
}

#[derive(Serialize)]
struct Meta<'a> {
    config: &'a str,
    train_digest: &'a str,
    val_digest: &'a str,
}

fn meta_for(cfg: &TrainConfig, train: &TokenStream, val: &TokenStream) -> String {
    let mut bare = cfg.clone();
    bare.out_dir = PathBuf::new();
    let text = bare.to_toml();
    serde_json::to_string(&Meta {
        config: &text,
        train_digest: train.digest(),
        val_digest: val.digest(),
    })
    .expect("meta serializes")
}

/// Steps (1-based) at which validation loss is recorded.
fn eval_steps(cfg: &TrainConfig, total: u64) -> Result<BTreeSet<u64>> {
    let mut set: BTreeSet<u64> = (1..=total / cfg.eval_every).map(|k| k * cfg.eval_every).collect();
    set.insert(total);
    if let Some(eq) = cfg.equal_compute_step()? {
        set.insert(eq);
    }
    if let super::config::Regime::Incremental { inc_steps, .. } = cfg.regime {
        set.insert(inc_steps);
    }
    Ok(set)
}

/// Executes one regime end to end, writing trace, checkpoint and plan into
/// the resolved output directory.
pub fn run(cfg: &TrainConfig, opts: RunOptions<'_>) -> Result<RunOutcome> {
    cfg.validate()?;
    let out_dir = cfg.resolved_out_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let schedule = cfg.schedule()?;
    let plan_text = schedule.describe();
    write_file(&out_dir.join(PLAN_FILE), &plan_text)?;
    write_file(&out_dir.join(CONFIG_FILE), &cfg.to_toml())?;
    if opts.dry_run {
        return dry_run(cfg, &schedule, out_dir, opts);
    }
    match cfg.model.precision {
        Precision::Fast32 => run_typed::<f32>(cfg, &schedule, out_dir, opts),
        Precision::Verify64 => run_typed::<f64>(cfg, &schedule, out_dir, opts),
    }
}

fn write_file(path: &std::path::Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn model_config(cfg: &TrainConfig) -> ModelConfig {
    ModelConfig {
        init_seed: cfg.seed,
        ..cfg.model.clone()
    }
}

fn dry_run(cfg: &TrainConfig, schedule: &Schedule, out_dir: PathBuf, mut opts: RunOptions<'_>) -> Result<RunOutcome> {
    let total = schedule.total_steps();
    let per_step = cfg.batch.tokens_per_step();
    let mut ledger = CostLedger::new(cfg.cost_params()?);
    let mut writer = TraceWriter::create(&out_dir.join(TRACE_FILE))?;
    let mut trace = RunTrace::default();
    let last = opts.stop_after.map_or(total, |s| s.min(total));
    for k in 0..last {
        let d = schedule.directive_at(k);
        let cum = ledger.meter_record(&d, Rational::from_integer(per_step as i128));
        let row = TraceRow {
            step: k + 1,
            tokens: (k + 1) * per_step,
            cum_cost: cum,
            mode: d.mode.label(),
            train_loss: None,
            val_loss: None,
        };
        writer.append(&row)?;
        if let Some(cb) = opts.on_row.as_deref_mut() {
            cb(&row);
        }
        trace.rows.push(row);
    }
    write_file(&out_dir.join(COST_FILE), &ledger.report_csv())?;
    Ok(RunOutcome {
        out_dir,
        trace,
        steps_done: last,
        total_steps: total,
        resumed_from: None,
        final_cost: ledger.total(),
    })
}

fn run_typed<F: Scalar>(cfg: &TrainConfig, schedule: &Schedule, out_dir: PathBuf, mut opts: RunOptions<'_>) -> Result<RunOutcome> {
    let (train, val) = load_data(cfg)?;
    let meta = meta_for(cfg, &train, &val);
    let batcher = Batcher::new(&train, cfg.batch, cfg.seed)?;
    let val_set = fixed_batches(&val, cfg.batch, cfg.val_batches)?;
    let total = schedule.total_steps();
    let per_step = cfg.batch.tokens_per_step();
    let per_step_r = Rational::from_integer(per_step as i128);
    let evals = eval_steps(cfg, total)?;
    let trace_path = out_dir.join(TRACE_FILE);
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);

    let mut store: ParameterStore<F>;
    let mut opt: OptState<F>;
    let mut ledger = CostLedger::new(cfg.cost_params()?);
    let mut trace = RunTrace::default();
    let mut writer;
    let mut start = 0;
    let mut resumed_from = None;
    if opts.resume && ckpt_path.exists() {
        let ck = checkpoint::load::<F>(&ckpt_path)?;
        if ck.run.meta != meta {
            bail!(Config, "checkpoint in {} was written by a different config or corpus", out_dir.display());
        }
        store = ck.store;
        opt = ck.opt;
        start = ck.run.steps_done;
        ledger = CostLedger::from_records(*ledger.params(), ck.run.ledger)?;
        writer = TraceWriter::resume(&trace_path, start)?;
        trace = RunTrace::read(&trace_path)?;
        if trace.last_step() != start {
            bail!(Checkpoint, "trace ends at step {} but checkpoint is at {start}", trace.last_step());
        }
        resumed_from = Some(start);
    } else {
        store = init_model(&model_config(cfg))?;
        opt = OptState::new();
        writer = TraceWriter::create(&trace_path)?;
    }

    let stop = opts.stop_after.map_or(total, |s| s.min(total));
    for k in start..stop {
        let d = schedule.directive_at(k);
        let added = schedule.groups_added_at(k);
        for &id in &added {
            store.reinit_group(id)?;
        }
        register_new_groups(&mut opt, &store, &added)?;

        let loss = train_step(&mut store, &mut opt, &cfg.optim, &d, &batcher.batch_at(k), k + 1);
        let cum = ledger.meter_record(&d, per_step_r);
        let mut row = TraceRow {
            step: k + 1,
            tokens: (k + 1) * per_step,
            cum_cost: cum,
            mode: d.mode.label(),
            train_loss: None,
            val_loss: None,
        };
        let loss = match loss {
            Ok(l) => l,
            Err(e) => {
                row.train_loss = Some(f64::NAN);
                writer.append(&row)?;
                return Err(e);
            }
        };
        row.train_loss = Some(loss);
        if evals.contains(&(k + 1)) {
            row.val_loss = Some(evaluate(&store, &val_set, d.active_depth)?);
        }
        writer.append(&row)?;
        if let Some(cb) = opts.on_row.as_deref_mut() {
            cb(&row);
        }
        trace.rows.push(row);

        let at_interval = cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0;
        if at_interval || k + 1 == total {
            let state = RunState {
                steps_done: k + 1,
                meta: meta.clone(),
                ledger: ledger.records().to_vec(),
            };
            checkpoint::save(&ckpt_path, &store, &opt, &state)?;
        }
    }
    if stop == total {
        write_file(&out_dir.join(COST_FILE), &ledger.report_csv())?;
    }
    Ok(RunOutcome {
        out_dir,
        trace,
        steps_done: stop,
        total_steps: total,
        resumed_from,
        final_cost: ledger.total(),
    })
}

/// Forward, loss, partial backward and one optimizer update. Returns the
/// training loss.
pub fn train_step<F: Scalar>(
    store: &mut ParameterStore<F>,
    opt: &mut OptState<F>,
    optim_cfg: &AdamWConfig,
    d: &StepDirective,
    batch: &TrainingBatch,
    global_step: u64,
) -> Result<f64> {
    store.set_trainable(d.active_depth, d.grad_depth_lo, d.train_embeddings_head);
    store.zero_grads();
    let (logits, tape) = forward(store, &batch.inputs, d.active_depth)?;
    let ce = cross_entropy_logits(&logits, &batch.targets.ids)?;
    drop(logits);
    backward(
        store,
        &tape,
        &ce.dlogits,
        BackwardSpec {
            grad_depth_lo: d.grad_depth_lo,
            train_embeddings_head: d.train_embeddings_head,
        },
    )?;
    optim::step(store, opt, optim_cfg, global_step)?;
    Ok(ce.loss)
}
