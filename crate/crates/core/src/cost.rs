//! Layer-token cost accounting in exact rational arithmetic.
//!
//! One unit is one block layer processing one token in one direction
//! (forward at `c`, backward at `ρ·c`). Embeddings, the final norm and the
//! head are not counted.

use std::fmt::Write as _;

use num_rational::Ratio;
use num_traits::{One, Signed, Zero};

use crate::error::{bail, Result};
use crate::schedule::{exact_segments, Mode, StepDirective};

pub type Rational = Ratio<i128>;

/// Parse `"3"`, `"3/4"` or `"0.75"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || crate::Error::Config(format!("not a rational number: {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| bad())?;
        let d: i128 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let neg = int.starts_with('-');
        let whole: i128 = if int.is_empty() || int == "-" { 0 } else { int.parse().map_err(|_| bad())? };
        let scale = 10i128.pow(frac.len() as u32);
        let f: i128 = frac.parse().map_err(|_| bad())?;
        let mag = Rational::new(whole.abs() * scale + f, scale);
        return Ok(if neg { -mag } else { mag });
    }
    s.parse::<i128>().map(Rational::from_integer).map_err(|_| bad())
}

/// Round to the nearest integer, halves going up.
pub fn round_half_up(r: Rational) -> i128 {
    (r + Rational::new(1, 2)).floor().to_integer()
}

/// Decimal rendering; integers print without a fractional part.
pub fn format_rational(r: Rational) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        let v = *r.numer() as f64 / *r.denom() as f64;
        format!("{v}")
    }
}

pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostParams {
    pub layers: usize,
    pub stages: usize,
    /// Forward cost per layer per token.
    pub c: Rational,
    /// Backward cost as a multiple of forward.
    pub rho: Rational,
}

impl CostParams {
    pub fn new(layers: usize, stages: usize) -> Result<Self> {
        let p = CostParams {
            layers,
            stages,
            c: Rational::one(),
            rho: Rational::one(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_c(mut self, c: Rational) -> Result<Self> {
        self.c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn with_rho(mut self, rho: Rational) -> Result<Self> {
        self.rho = rho;
        self.validate()?;
        Ok(self)
    }

    /// `L % S == 0` is required only where a concrete schedule is needed;
    /// the closed forms stay meaningful for fractional `m`.
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.stages == 0 {
            bail!(Config, "layers ({}) and stages ({}) must be positive", self.layers, self.stages);
        }
        if !self.c.is_positive() || !self.rho.is_positive() {
            bail!(Config, "cost unit and backward ratio must be positive");
        }
        Ok(())
    }

    fn require_divisible(&self) -> Result<usize> {
        if self.layers % self.stages != 0 {
            bail!(Config, "{} layers cannot be divided evenly into {} stages", self.layers, self.stages);
        }
        Ok(self.layers / self.stages)
    }

    fn l(&self) -> Rational {
        Rational::from_integer(self.layers as i128)
    }

    fn s(&self) -> Rational {
        Rational::from_integer(self.stages as i128)
    }

    /// Cost of one token under `d`.
    pub fn per_token(&self, d: &StepDirective) -> Rational {
        let fwd = Rational::from_integer(d.active_depth as i128);
        let bwd = Rational::from_integer(d.backward_depth() as i128);
        self.c * (fwd + self.rho * bwd)
    }
}

/// `T·L·c·(1+ρ)`.
pub fn baseline_cost(p: &CostParams, tokens: Rational) -> Rational {
    tokens * p.l() * p.c * (Rational::one() + p.rho)
}

/// `T_inc·c·L·(3S+5)/(4S)`; only valid when backward costs the same as forward.
pub fn incremental_cost_closed_form(p: &CostParams, t_inc: Rational) -> Result<Rational> {
    if !p.rho.is_one() {
        bail!(
            Assumption,
            "closed form assumes backward/forward ratio 1 (got {}); use the brute-force sum or the meter",
            p.rho
        );
    }
    let s = p.s();
    Ok(t_inc * p.c * p.l() * (Rational::from_integer(3) * s + Rational::from_integer(5)) / (Rational::from_integer(4) * s))
}

/// Explicit sum over stages of both phase costs.
pub fn incremental_cost_brute_force(p: &CostParams, t_inc: Rational) -> Result<Rational> {
    let m = Rational::from_integer(p.require_divisible()? as i128);
    let phase_tokens = t_inc / (Rational::from_integer(2) * p.s());
    let mut total = Rational::zero();
    for i in 1..=p.stages {
        let li = Rational::from_integer(i as i128) * m;
        total += phase_tokens * (li + p.rho * m) * p.c;
        total += phase_tokens * (li + p.rho * li) * p.c;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EqualCompute {
    /// Continual tokens (or steps) needed after the incremental budget.
    pub t_cont: Rational,
    /// `T + T_cont`, unrounded.
    pub point: Rational,
    /// `point` rounded half up.
    pub step: i128,
}

/// Continual budget that brings an incremental run with `T_inc = T` to the
/// cost of a baseline run over `T`. Exact closed form when `ρ = 1`;
/// otherwise solved from the brute-force cost, which needs `L % S == 0`.
pub fn continual_tokens_to_match(p: &CostParams, t: Rational) -> Result<EqualCompute> {
    let t_cont = if p.rho.is_one() {
        let s = p.s();
        Rational::new(5, 8) * (Rational::one() - s.recip()) * t
    } else {
        let gap = baseline_cost(p, t) - incremental_cost_brute_force(p, t)?;
        gap / (p.l() * p.c * (Rational::one() + p.rho))
    };
    let point = t + t_cont;
    Ok(EqualCompute {
        t_cont,
        point,
        step: round_half_up(point),
    })
}

/// Accumulated cost of one contiguous run of a single mode.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseCost {
    pub mode: Mode,
    pub tokens: Rational,
    pub cost: Rational,
    /// Ledger total when this entry last grew.
    pub cumulative: Rational,
}

/// One metered step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCost {
    pub mode: Mode,
    pub tokens: Rational,
    pub cumulative: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostLedger {
    params: CostParams,
    steps: Vec<StepCost>,
}

impl CostLedger {
    pub fn new(params: CostParams) -> Self {
        CostLedger { params, steps: Vec::new() }
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    /// Charge `tokens` processed under `directive`; one call per step.
    /// Returns the new cumulative total.
    pub fn meter_record(&mut self, directive: &StepDirective, tokens: Rational) -> Rational {
        let total = self.total() + tokens * self.params.per_token(directive);
        self.steps.push(StepCost {
            mode: directive.mode,
            tokens,
            cumulative: total,
        });
        total
    }

    pub fn total(&self) -> Rational {
        self.steps.last().map_or_else(Rational::zero, |s| s.cumulative)
    }

    pub fn total_tokens(&self) -> Rational {
        self.steps.iter().map(|s| s.tokens).sum()
    }

    pub fn records(&self) -> &[StepCost] {
        &self.steps
    }

    /// Cumulative cost after each recorded step.
    pub fn cumulative(&self) -> Vec<Rational> {
        self.steps.iter().map(|s| s.cumulative).collect()
    }

    /// Consecutive steps of one mode merged.
    pub fn phases(&self) -> Vec<PhaseCost> {
        let mut out: Vec<PhaseCost> = Vec::new();
        let mut prev = Rational::zero();
        for st in &self.steps {
            let cost = st.cumulative - prev;
            prev = st.cumulative;
            match out.last_mut() {
                Some(last) if last.mode == st.mode => {
                    last.tokens += st.tokens;
                    last.cost += cost;
                    last.cumulative = st.cumulative;
                }
                _ => out.push(PhaseCost {
                    mode: st.mode,
                    tokens: st.tokens,
                    cost,
                    cumulative: st.cumulative,
                }),
            }
        }
        out
    }

    /// Cost charged to both phases of `stage`.
    pub fn stage_cost(&self, stage: usize) -> Rational {
        self.phases()
            .iter()
            .filter(|p| matches!(p.mode, Mode::Phase1 { stage: s } | Mode::Phase2 { stage: s } if s == stage))
            .map(|p| p.cost)
            .sum()
    }

    pub fn continual_cost(&self) -> Rational {
        self.phases().iter().filter(|p| p.mode == Mode::Continual).map(|p| p.cost).sum()
    }

    /// Keep only the first `steps` records.
    pub fn truncate(&mut self, steps: usize) {
        self.steps.truncate(steps);
    }

    /// Rebuild from saved records; cumulative totals must not decrease.
    pub fn from_records(params: CostParams, steps: Vec<StepCost>) -> Result<Self> {
        if steps.windows(2).any(|w| w[1].cumulative < w[0].cumulative) {
            bail!(Checkpoint, "cost ledger totals decrease");
        }
        Ok(CostLedger { params, steps })
    }

    /// `stage,phase,tokens,cost,cumulative_cost` rows.
    pub fn report_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["stage", "phase", "tokens", "cost", "cumulative_cost"]);
        for ph in self.phases() {
            let (stage, phase) = mode_columns(ph.mode);
            let _ = w.write_record([
                stage,
                phase,
                format_rational(ph.tokens),
                format_rational(ph.cost),
                format_rational(ph.cumulative),
            ]);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:<10} {:>16} {:>18} {:>18}", "stage", "phase", "tokens", "cost", "cumulative");
        for ph in self.phases() {
            let (stage, phase) = mode_columns(ph.mode);
            let _ = writeln!(
                s,
                "{:<8} {:<10} {:>16} {:>18} {:>18}",
                stage,
                phase,
                format_rational(ph.tokens),
                format_rational(ph.cost),
                format_rational(ph.cumulative)
            );
        }
        let _ = writeln!(s, "total {}", format_rational(self.total()));
        s
    }
}

fn mode_columns(mode: Mode) -> (String, String) {
    match mode {
        Mode::Phase1 { stage } => (stage.to_string(), "1".into()),
        Mode::Phase2 { stage } => (stage.to_string(), "2".into()),
        Mode::Continual => ("-".into(), "continual".into()),
        Mode::Baseline => ("-".into(), "baseline".into()),
    }
}

/// Meter an unrounded incremental schedule of `t_inc` tokens followed by
/// `t_cont` continual tokens.
pub fn meter_exact_schedule(p: &CostParams, phase_split: Rational, t_inc: Rational, t_cont: Rational) -> Result<CostLedger> {
    let mut ledger = CostLedger::new(*p);
    for seg in exact_segments(p.layers, p.stages, phase_split, t_inc)? {
        ledger.meter_record(&seg.directive, seg.tokens);
    }
    if t_cont.is_positive() {
        ledger.meter_record(&StepDirective::full(Mode::Continual, p.layers), t_cont);
    }
    Ok(ledger)
}

/// Closed-form summary printed by the `cost` command.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSummary {
    pub params: CostParams,
    pub t: Rational,
    pub baseline: Rational,
    pub incremental: Option<Rational>,
    pub stage_costs: Vec<Rational>,
    pub equal: EqualCompute,
}

pub fn summarize(p: &CostParams, t: Rational) -> Result<CostSummary> {
    let incremental = if p.rho.is_one() {
        Some(incremental_cost_closed_form(p, t)?)
    } else if p.layers % p.stages == 0 {
        Some(incremental_cost_brute_force(p, t)?)
    } else {
        None
    };
    let m = p.l() / p.s();
    let stage_costs = (1..=p.stages)
        .map(|i| {
            let li = Rational::from_integer(i as i128) * m;
            let half = t / (Rational::from_integer(2) * p.s());
            half * (li + p.rho * m) * p.c + half * (li + p.rho * li) * p.c
        })
        .collect();
    Ok(CostSummary {
        params: *p,
        t,
        baseline: baseline_cost(p, t),
        incremental,
        stage_costs,
        equal: continual_tokens_to_match(p, t)?,
    })
}

impl CostSummary {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(s, "L = {}  S = {}  m = {}  T = T_inc = {}", p.layers, p.stages, format_rational(p.l() / p.s()), format_rational(self.t));
        let _ = writeln!(s, "c = {}  rho = {}", p.c, p.rho);
        let _ = writeln!(s, "C_baseline = {}", format_rational(self.baseline));
        for (i, c) in self.stage_costs.iter().enumerate() {
            let _ = writeln!(s, "C_stage_{} = {}", i + 1, format_rational(*c));
        }
        match self.incremental {
            Some(c) => {
                let _ = writeln!(s, "C_incremental = {}", format_rational(c));
            }
            None => {
                let _ = writeln!(s, "C_incremental = n/a");
            }
        }
        let _ = writeln!(s, "T_cont = {}", format_rational(self.equal.t_cont));
        let _ = writeln!(s, "C_continual = {}", format_rational(self.baseline - self.incremental.unwrap_or(self.baseline - self.equal.t_cont * p.l() * p.c * (Rational::one() + p.rho))));
        let _ = writeln!(s, "equal_compute_point = {}", format_rational(self.equal.point));
        let _ = writeln!(s, "equal_compute_step = {}", self.equal.step);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["quantity", "value"]);
        let mut row = |k: &str, v: String| {
            let _ = w.write_record([k, v.as_str()]);
        };
        row("L", self.params.layers.to_string());
        row("S", self.params.stages.to_string());
        row("T", format_rational(self.t));
        row("C_baseline", format_rational(self.baseline));
        for (i, c) in self.stage_costs.iter().enumerate() {
            row(&format!("C_stage_{}", i + 1), format_rational(*c));
        }
        if let Some(c) = self.incremental {
            row("C_incremental", format_rational(c));
        }
        row("T_cont", format_rational(self.equal.t_cont));
        row("equal_compute_point", format_rational(self.equal.point));
        row("equal_compute_step", self.equal.step.to_string());
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i128) -> Rational {
        Rational::from_integer(n)
    }

    #[test]
    fn baseline_twelve_layers() {
        let p = CostParams::new(12, 4).unwrap();
        assert_eq!(baseline_cost(&p, r(10_000)), r(240_000));
        let p2 = p.with_rho(r(2)).unwrap();
        assert_eq!(baseline_cost(&p2, r(10)), r(10 * 12 * 3));
    }

    #[test]
    fn incremental_four_stages() {
        let p = CostParams::new(12, 4).unwrap();
        assert_eq!(incremental_cost_closed_form(&p, r(10_000)).unwrap(), r(127_500));
        let hand: i128 = (1..=4).map(|i| 1250 * (9 * i + 3)).sum();
        assert_eq!(incremental_cost_brute_force(&p, r(10_000)).unwrap(), r(hand));
    }

    #[test]
    fn closed_form_refuses_unequal_backward() {
        let p = CostParams::new(12, 4).unwrap().with_rho(Rational::new(3, 2)).unwrap();
        assert!(matches!(incremental_cost_closed_form(&p, r(1)), Err(crate::Error::Assumption(_))));
    }

    #[test]
    fn single_stage_degenerates_to_baseline() {
        let p = CostParams::new(12, 1).unwrap();
        assert_eq!(incremental_cost_closed_form(&p, r(777)).unwrap(), baseline_cost(&p, r(777)));
        assert_eq!(continual_tokens_to_match(&p, r(10_000)).unwrap().t_cont, r(0));
        let p2 = p.with_rho(r(2)).unwrap();
        assert_eq!(incremental_cost_brute_force(&p2, r(50)).unwrap(), r(3 * 50 * 12));
        assert_eq!(incremental_cost_brute_force(&p2, r(50)).unwrap(), baseline_cost(&p2, r(50)));
    }

    #[test]
    fn published_equal_compute_steps() {
        for (s, t_cont, step) in [(4, Rational::new(9375, 2), 14_688), (8, Rational::new(21875, 4), 15_469), (12, Rational::new(34375, 6), 15_729)] {
            let eq = continual_tokens_to_match(&CostParams::new(12, s).unwrap(), r(10_000)).unwrap();
            assert_eq!(eq.t_cont, t_cont, "S={s}");
            assert_eq!(eq.step, step, "S={s}");
        }
    }

    #[test]
    fn matching_solves_the_budget_equation() {
        for s in 1..=12 {
            for l in [12usize, 24, 36] {
                let p = CostParams::new(l, s).unwrap();
                let t = r(10_000);
                let eq = continual_tokens_to_match(&p, t).unwrap();
                let inc = incremental_cost_closed_form(&p, t).unwrap();
                assert_eq!(inc + r(2) * eq.t_cont * r(l as i128), baseline_cost(&p, t));
            }
        }
    }

    #[test]
    fn unequal_backward_solved_exactly() {
        let p = CostParams::new(12, 4).unwrap().with_rho(r(2)).unwrap();
        let t = r(10_000);
        let eq = continual_tokens_to_match(&p, t).unwrap();
        let inc = incremental_cost_brute_force(&p, t).unwrap();
        assert_eq!(inc + eq.t_cont * r(12) * r(3), baseline_cost(&p, t));
        let metered = meter_exact_schedule(&p, Rational::new(1, 2), t, eq.t_cont).unwrap();
        assert_eq!(metered.total(), baseline_cost(&p, t));
    }

    #[test]
    fn rounding_and_parsing() {
        assert_eq!(round_half_up(Rational::new(29375, 2)), 14_688);
        assert_eq!(round_half_up(Rational::new(7, 4)), 2);
        assert_eq!(round_half_up(Rational::new(5, 4)), 1);
        assert_eq!(parse_rational("3/4").unwrap(), Rational::new(3, 4));
        assert_eq!(parse_rational("0.75").unwrap(), Rational::new(3, 4));
        assert_eq!(parse_rational("-1.5").unwrap(), Rational::new(-3, 2));
        assert_eq!(parse_rational("12").unwrap(), r(12));
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn per_phase_costs() {
        let p = CostParams::new(12, 4).unwrap();
        let d1 = StepDirective::phase1(3, 3);
        assert_eq!(p.per_token(&d1), r(9 + 3));
        let d2 = StepDirective::phase2(3, 3);
        assert_eq!(p.per_token(&d2), r(18));
        let ledger = meter_exact_schedule(&p, Rational::new(1, 2), r(10_000), r(0)).unwrap();
        for i in 1..=4 {
            assert_eq!(ledger.stage_cost(i), r(1250 * (9 * i as i128 + 3)));
        }
        assert!(ledger.report_csv().starts_with("stage,phase,tokens,cost,cumulative_cost"));
        assert!(ledger.report_text().contains("total 127500"));
    }

    #[test]
    fn summary_prints_headline_numbers() {
        let text = summarize(&CostParams::new(12, 4).unwrap(), r(10_000)).unwrap().to_text();
        for needle in ["C_baseline = 240000", "C_incremental = 127500", "T_cont = 4687.5", "equal_compute_step = 14688"] {
            assert!(text.contains(needle), "{needle} missing from\n{text}");
        }
        // indivisible L/S still has a closed form
        let s8 = summarize(&CostParams::new(12, 8).unwrap(), r(10_000)).unwrap();
        assert_eq!(s8.equal.step, 15_469);
        assert_eq!(s8.incremental, Some(r(108_750)));
    }

    #[test]
    fn truncation_keeps_prefix() {
        let p = CostParams::new(4, 2).unwrap();
        let mut ledger = CostLedger::new(p);
        let d1 = StepDirective::phase1(1, 2);
        let d2 = StepDirective::phase2(1, 2);
        for d in [d1, d1, d2, d2] {
            ledger.meter_record(&d, r(10));
        }
        let full = ledger.cumulative();
        ledger.truncate(3);
        assert_eq!(ledger.cumulative(), full[..3].to_vec());
        assert_eq!(ledger.phases().len(), 2);
        assert_eq!(ledger.phases()[1].cost, full[2] - full[1]);
    }

    proptest! {
        #[test]
        fn meter_equals_formulas(
            (layers, stages) in (1usize..=48).prop_flat_map(|l| {
                let d: Vec<usize> = (1..=l.min(12)).filter(|s| l % s == 0).collect();
                (Just(l), proptest::sample::select(d))
            }),
            t in prop_oneof![Just(1i128), Just(10_000i128), 1i128..1_000_000],
        ) {
            let p = CostParams::new(layers, stages).unwrap();
            let t = r(t);
            let ledger = meter_exact_schedule(&p, Rational::new(1, 2), t, r(0)).unwrap();
            let bf = incremental_cost_brute_force(&p, t).unwrap();
            prop_assert_eq!(ledger.total(), bf);
            prop_assert_eq!(bf, incremental_cost_closed_form(&p, t).unwrap());
            prop_assert!(ledger.cumulative().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
