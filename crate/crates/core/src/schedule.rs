//! Training-regime state machine.
//!
//! An incremental plan splits `L` blocks into `S` stages of `m = L/S` blocks.
//! Stage `i` first trains only its new blocks on top of the frozen lower
//! ones (phase 1), then the whole active prefix (phase 2). After the last
//! stage the full model keeps training (continual mode). A baseline plan
//! trains all blocks from the first step.
//!
//! Budgets are counted in optimizer steps; every step consumes the same
//! number of tokens, so step counts and token counts are interchangeable.

use std::fmt::Write as _;

use num_traits::{One, Zero};

use crate::cost::Rational;
use crate::error::{bail, Result};
use crate::model::GroupId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Phase1 { stage: usize },
    Phase2 { stage: usize },
    Continual,
    Baseline,
}

impl Mode {
    /// Short label used in traces and reports (`p1s2`, `p2s2`, `cont`, `base`).
    pub fn label(&self) -> String {
        match self {
            Mode::Phase1 { stage } => format!("p1s{stage}"),
            Mode::Phase2 { stage } => format!("p2s{stage}"),
            Mode::Continual => "cont".into(),
            Mode::Baseline => "base".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "cont" => Some(Mode::Continual),
            "base" => Some(Mode::Baseline),
            _ => {
                if let Some(n) = s.strip_prefix("p1s") {
                    n.parse().ok().map(|stage| Mode::Phase1 { stage })
                } else if let Some(n) = s.strip_prefix("p2s") {
                    n.parse().ok().map(|stage| Mode::Phase2 { stage })
                } else {
                    None
                }
            }
        }
    }
}

/// What one optimizer step does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StepDirective {
    pub mode: Mode,
    /// Blocks `1..=active_depth` run forward.
    pub active_depth: usize,
    /// Blocks `grad_depth_lo..=active_depth` receive gradient.
    pub grad_depth_lo: usize,
    pub train_embeddings_head: bool,
}

impl StepDirective {
    pub fn phase1(stage: usize, per_stage: usize) -> Self {
        StepDirective {
            mode: Mode::Phase1 { stage },
            active_depth: stage * per_stage,
            grad_depth_lo: (stage - 1) * per_stage + 1,
            // nothing below the first stage can ground the embeddings
            train_embeddings_head: stage == 1,
        }
    }

    pub fn phase2(stage: usize, per_stage: usize) -> Self {
        StepDirective {
            mode: Mode::Phase2 { stage },
            active_depth: stage * per_stage,
            grad_depth_lo: 1,
            train_embeddings_head: true,
        }
    }

    pub fn full(mode: Mode, layers: usize) -> Self {
        StepDirective {
            mode,
            active_depth: layers,
            grad_depth_lo: 1,
            train_embeddings_head: true,
        }
    }

    /// Blocks that receive gradient.
    pub fn backward_depth(&self) -> usize {
        self.active_depth + 1 - self.grad_depth_lo
    }

    /// Same computation, ignoring the mode label.
    pub fn same_work(&self, other: &StepDirective) -> bool {
        self.active_depth == other.active_depth
            && self.grad_depth_lo == other.grad_depth_lo
            && self.train_embeddings_head == other.train_embeddings_head
    }
}

/// Step range `[start, end)` of one stage; phase 2 begins at `phase2_start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageBounds {
    pub stage: usize,
    pub start: u64,
    pub phase2_start: u64,
    pub end: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    layers: usize,
    stages: usize,
    inc_steps: u64,
    cont_steps: u64,
    phase_split: Rational,
    bounds: Vec<StageBounds>,
}

fn floor_to_u64(r: Rational) -> u64 {
    r.floor().to_integer() as u64
}

impl StagePlan {
    /// Stage `i` spans steps `⌊(i−1)·T_inc/S⌋ .. ⌊i·T_inc/S⌋`; phase 1 gets
    /// `⌊len·split⌋` of them and phase 2 the rest, so stage totals add up to
    /// `T_inc` exactly.
    pub fn build(layers: usize, stages: usize, inc_steps: u64, cont_steps: u64, phase_split: Rational) -> Result<Self> {
        if layers == 0 || stages == 0 {
            bail!(Config, "layers ({layers}) and stages ({stages}) must be positive");
        }
        if layers % stages != 0 {
            bail!(Config, "{layers} layers cannot be divided evenly into {stages} stages");
        }
        if inc_steps == 0 {
            bail!(Config, "incremental budget must be positive");
        }
        if !(phase_split > Rational::zero() && phase_split <= Rational::one()) {
            bail!(Config, "phase split must lie in (0, 1], got {phase_split}");
        }
        let s = stages as i128;
        let t = inc_steps as i128;
        let bounds = (1..=stages)
            .map(|i| {
                let start = floor_to_u64(Rational::new((i as i128 - 1) * t, s));
                let end = floor_to_u64(Rational::new(i as i128 * t, s));
                let p1 = floor_to_u64(Rational::from_integer((end - start) as i128) * phase_split);
                StageBounds {
                    stage: i,
                    start,
                    phase2_start: start + p1,
                    end,
                }
            })
            .collect();
        Ok(StagePlan {
            layers,
            stages,
            inc_steps,
            cont_steps,
            phase_split,
            bounds,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn layers_per_stage(&self) -> usize {
        self.layers / self.stages
    }

    pub fn inc_steps(&self) -> u64 {
        self.inc_steps
    }

    pub fn cont_steps(&self) -> u64 {
        self.cont_steps
    }

    pub fn phase_split(&self) -> Rational {
        self.phase_split
    }

    pub fn bounds(&self) -> &[StageBounds] {
        &self.bounds
    }

    /// Active depth `Lᵢ = i·m` of stage `i`.
    pub fn depth_of_stage(&self, stage: usize) -> usize {
        stage * self.layers_per_stage()
    }

    pub fn total_steps(&self) -> u64 {
        self.inc_steps + self.cont_steps
    }

    /// Directive for the step taken after `steps_consumed` steps. Steps past
    /// the incremental budget are continual, without an upper limit.
    pub fn directive_at(&self, steps_consumed: u64) -> StepDirective {
        let m = self.layers_per_stage();
        if steps_consumed >= self.inc_steps {
            return StepDirective::full(Mode::Continual, self.layers);
        }
        let idx = self.bounds.partition_point(|b| b.end <= steps_consumed);
        let b = &self.bounds[idx];
        if steps_consumed < b.phase2_start {
            StepDirective::phase1(b.stage, m)
        } else {
            StepDirective::phase2(b.stage, m)
        }
    }

    /// Groups that come into existence at the start of step `steps_consumed`.
    pub fn groups_added_at(&self, steps_consumed: u64) -> Vec<GroupId> {
        let m = self.layers_per_stage();
        let Some(b) = self.bounds.iter().find(|b| b.start == steps_consumed && b.end > b.start) else {
            return Vec::new();
        };
        let mut ids: Vec<GroupId> = Vec::new();
        // stages with no steps (tiny budgets) hand their blocks to the next one
        let first_block = self
            .bounds
            .iter()
            .take_while(|x| x.stage < b.stage)
            .filter(|x| x.end > x.start)
            .last()
            .map_or(1, |x| x.stage * m + 1);
        if first_block == 1 {
            ids.extend([GroupId::Embed, GroupId::Head]);
        }
        ids.extend((first_block..=b.stage * m).map(GroupId::Block));
        ids
    }

    /// Plan echo for run metadata.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[plan]");
        let _ = writeln!(s, "kind = \"incremental\"");
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "stages = {}", self.stages);
        let _ = writeln!(s, "layers_per_stage = {}", self.layers_per_stage());
        let _ = writeln!(s, "inc_steps = {}", self.inc_steps);
        let _ = writeln!(s, "cont_steps = {}", self.cont_steps);
        let _ = writeln!(s, "phase_split = \"{}\"", self.phase_split);
        for b in &self.bounds {
            let _ = writeln!(
                s,
                "stage_{} = {{ start = {}, phase2_start = {}, end = {}, depth = {} }}",
                b.stage,
                b.start,
                b.phase2_start,
                b.end,
                self.depth_of_stage(b.stage)
            );
        }
        s
    }
}

/// Every step trains all `layers` blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BaselinePlan {
    pub layers: usize,
    pub steps: u64,
}

impl BaselinePlan {
    pub fn new(layers: usize, steps: u64) -> Result<Self> {
        if layers == 0 || steps == 0 {
            bail!(Config, "baseline needs positive layers and steps");
        }
        Ok(BaselinePlan { layers, steps })
    }

    pub fn directive_at(&self, _steps_consumed: u64) -> StepDirective {
        StepDirective::full(Mode::Baseline, self.layers)
    }
}

/// Either regime behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Baseline(BaselinePlan),
    Incremental(StagePlan),
}

impl Schedule {
    pub fn layers(&self) -> usize {
        match self {
            Schedule::Baseline(p) => p.layers,
            Schedule::Incremental(p) => p.layers(),
        }
    }

    pub fn total_steps(&self) -> u64 {
        match self {
            Schedule::Baseline(p) => p.steps,
            Schedule::Incremental(p) => p.total_steps(),
        }
    }

    pub fn directive_at(&self, steps_consumed: u64) -> StepDirective {
        match self {
            Schedule::Baseline(p) => p.directive_at(steps_consumed),
            Schedule::Incremental(p) => p.directive_at(steps_consumed),
        }
    }

    pub fn groups_added_at(&self, steps_consumed: u64) -> Vec<GroupId> {
        match self {
            Schedule::Baseline(p) if steps_consumed == 0 => std::iter::once(GroupId::Embed)
                .chain((1..=p.layers).map(GroupId::Block))
                .chain(std::iter::once(GroupId::Head))
                .collect(),
            Schedule::Baseline(_) => Vec::new(),
            Schedule::Incremental(p) => p.groups_added_at(steps_consumed),
        }
    }

    /// Every group that exists once `steps_consumed` steps have been taken.
    pub fn groups_present_after(&self, steps_consumed: u64) -> Vec<GroupId> {
        let mut ids: Vec<GroupId> = (0..steps_consumed.max(1)).flat_map(|k| self.groups_added_at(k)).collect();
        ids.sort();
        ids
    }

    pub fn describe(&self) -> String {
        match self {
            Schedule::Baseline(p) => {
                format!("[plan]\nkind = \"baseline\"\nlayers = {}\nsteps = {}\n", p.layers, p.steps)
            }
            Schedule::Incremental(p) => p.describe(),
        }
    }
}

/// One slice of an incremental schedule with its exact (possibly
/// fractional) token budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub directive: StepDirective,
    pub tokens: Rational,
}

/// The `2S` phases of an incremental schedule with unrounded budgets
/// `T_inc/S · split` and `T_inc/S · (1 − split)`.
pub fn exact_segments(layers: usize, stages: usize, phase_split: Rational, t_inc: Rational) -> Result<Vec<Segment>> {
    if stages == 0 || layers % stages != 0 {
        bail!(Config, "{layers} layers cannot be divided evenly into {stages} stages");
    }
    let m = layers / stages;
    let per_stage = t_inc / Rational::from_integer(stages as i128);
    Ok((1..=stages)
        .flat_map(|i| {
            [
                Segment {
                    directive: StepDirective::phase1(i, m),
                    tokens: per_stage * phase_split,
                },
                Segment {
                    directive: StepDirective::phase2(i, m),
                    tokens: per_stage * (Rational::one() - phase_split),
                },
            ]
        })
        .collect())
}
