//! AdamW with per-group freeze masks and per-group bias-correction clocks.
//!
//! Groups join the optimizer when their layer is introduced; a group that
//! joins late starts from zero moments and its own step counter, while the
//! moments of groups already present carry on untouched. Only groups that
//! are both registered and marked trainable in the store are ever written.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::{GroupId, ParameterStore};
use crate::numkernel::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear warmup length in steps; the rate is constant afterwards.
    pub warmup_steps: u64,
    /// Global L2 gradient-norm ceiling; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 6e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            warmup_steps: 100,
            grad_clip_norm: Some(1.0),
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "lr must be positive, got {}", self.lr);
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bail!(Config, "{name} must lie in [0, 1), got {b}");
            }
        }
        if !(self.eps > 0.0) {
            bail!(Config, "eps must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            bail!(Config, "weight_decay must be non-negative");
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                bail!(Config, "grad_clip_norm must be positive when set");
            }
        }
        Ok(())
    }
}

/// Learning rate for the step numbered `global_step`: `lr · step / warmup`
/// during warmup, `lr` afterwards. Stage changes do not restart warmup.
pub fn lr_at(cfg: &AdamWConfig, global_step: u64) -> f64 {
    if global_step >= cfg.warmup_steps {
        cfg.lr
    } else {
        cfg.lr * global_step as f64 / cfg.warmup_steps as f64
    }
}

/// Moments and step counter of one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupState<F> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState<F> {
    pub groups: BTreeMap<GroupId, GroupState<F>>,
}

impl<F> Default for OptState<F> {
    fn default() -> Self {
        OptState { groups: BTreeMap::new() }
    }
}

impl<F: Scalar> OptState<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_registered(&self, id: GroupId) -> bool {
        self.groups.contains_key(&id)
    }
}

/// Adds zeroed moments and a fresh step counter for each listed group.
pub fn register_new_groups<F: Scalar>(state: &mut OptState<F>, store: &ParameterStore<F>, ids: &[GroupId]) -> Result<()> {
    for &id in ids {
        if state.groups.contains_key(&id) {
            bail!(Schedule, "optimizer state for {id} is already registered");
        }
        let Some(group) = store.group(id) else {
            bail!(Schedule, "cannot register {id}: no such parameter group");
        };
        let zeros = || group.params.iter().map(|p| vec![F::zero(); p.buf.value.len()]).collect();
        state.groups.insert(
            id,
            GroupState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        );
    }
    Ok(())
}

/// What a call to [`step`] did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub lr: f64,
    /// Global gradient norm over trainable groups, before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// One AdamW update of every trainable group.
///
/// Weight decay is decoupled (`w ← w − lr·λ·w`) and applies to matrices and
/// embedding tables only, not to biases or norm gains.
pub fn step<F: Scalar>(
    store: &mut ParameterStore<F>,
    state: &mut OptState<F>,
    cfg: &AdamWConfig,
    global_step: u64,
) -> Result<StepReport> {
    let active: Vec<GroupId> = store.groups().filter(|g| g.trainable).map(|g| g.id).collect();
    let mut sq = 0.0f64;
    for &id in &active {
        if !state.is_registered(id) {
            bail!(Schedule, "trainable group {id} has no optimizer state");
        }
        let group = store.group(id).unwrap();
        for p in &group.params {
            for &g in p.buf.grad.data() {
                if !g.is_finite() {
                    bail!(Numeric, "non-finite gradient in {id}.{}", p.name);
                }
                sq += g.as_f64() * g.as_f64();
            }
        }
    }
    let grad_norm = sq.sqrt();
    let (scale, clipped) = match cfg.grad_clip_norm {
        Some(max) if grad_norm > max => (max / grad_norm, true),
        _ => (1.0, false),
    };

    let lr = lr_at(cfg, global_step);
    let (lr_f, wd, b1, b2, eps) = (F::of(lr), F::of(cfg.weight_decay), F::of(cfg.beta1), F::of(cfg.beta2), F::of(cfg.eps));
    let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
    let scale = F::of(scale);

    for &id in &active {
        let gs = state.groups.get_mut(&id).expect("checked above");
        gs.step += 1;
        let t = gs.step as i32;
        let bc1 = F::of(1.0 - cfg.beta1.powi(t));
        let bc2 = F::of(1.0 - cfg.beta2.powi(t));
        let group = store.group_mut(id).unwrap();
        for ((p, m), v) in group.params.iter_mut().zip(&mut gs.m).zip(&mut gs.v) {
            let decay = p.buf.value.shape().len() >= 2 && cfg.weight_decay > 0.0;
            let grads = p.buf.grad.data();
            let values = p.buf.value.data_mut();
            for (((w, &g), mi), vi) in values.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = if clipped { g * scale } else { g };
                if decay {
                    *w = *w - lr_f * wd * *w;
                }
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - lr_f * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(StepReport { lr, grad_norm, clipped })
}
