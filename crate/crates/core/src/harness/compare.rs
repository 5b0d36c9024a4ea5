use std::fmt::Write as _;

use super::trace::{format_cost, RunTrace, TraceRow};
use crate::cost::Rational;
use crate::error::{bail, Result};

/// Where one incremental run stands against the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeComparison {
    pub name: String,
    /// First step whose cumulative cost reaches the baseline's; `None` when
    /// the trace stops short.
    pub equal_compute_step: Option<u64>,
    pub val_loss: Option<f64>,
    /// `val_loss − baseline_val_loss`.
    pub gap: Option<f64>,
    /// First evaluated step with val loss at or below the baseline's.
    pub first_step_matching_baseline: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub baseline_steps: u64,
    pub baseline_cost: Rational,
    pub baseline_val_loss: Option<f64>,
    pub regimes: Vec<RegimeComparison>,
}

/// Latest recorded val loss at or before `row`.
fn val_at(trace: &TraceRow, rows: &[TraceRow]) -> Option<f64> {
    trace.val_loss.or_else(|| rows.iter().rev().filter(|r| r.step <= trace.step).find_map(|r| r.val_loss))
}

pub fn compare(baseline: &RunTrace, incremental: &[(String, RunTrace)], baseline_steps: u64) -> Result<ComparisonReport> {
    let Some(base_row) = baseline.row_at(baseline_steps) else {
        bail!(
            Data,
            "baseline trace ends at step {} and has no row for step {baseline_steps}",
            baseline.last_step()
        );
    };
    let base_cost = base_row.cum_cost;
    let base_val = val_at(base_row, &baseline.rows);
    let regimes = incremental
        .iter()
        .map(|(name, t)| {
            let hit = t.rows.iter().find(|r| r.cum_cost >= base_cost);
            let val = hit.and_then(|r| val_at(r, &t.rows));
            let gap = match (val, base_val) {
                (Some(v), Some(b)) => Some(v - b),
                _ => None,
            };
            let first_match = base_val.and_then(|b| t.rows.iter().find(|r| r.val_loss.is_some_and(|v| v <= b)).map(|r| r.step));
            RegimeComparison {
                name: name.clone(),
                equal_compute_step: hit.map(|r| r.step),
                val_loss: val,
                gap,
                first_step_matching_baseline: first_match,
            }
        })
        .collect();
    Ok(ComparisonReport {
        baseline_steps,
        baseline_cost: base_cost,
        baseline_val_loss: base_val,
        regimes,
    })
}

fn opt<T: ToString>(v: Option<T>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |x| x.to_string())
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "baseline: step {}  cost {}  val_loss {}",
            self.baseline_steps,
            format_cost(self.baseline_cost),
            opt(self.baseline_val_loss.map(|v| format!("{v:.4}")), "-")
        );
        let _ = writeln!(s, "{:<16} {:>12} {:>12} {:>12} {:>14}", "regime", "equal_step", "val_loss", "gap", "matches_at");
        for r in &self.regimes {
            let _ = writeln!(
                s,
                "{:<16} {:>12} {:>12} {:>12} {:>14}",
                r.name,
                opt(r.equal_compute_step, "not reached"),
                opt(r.val_loss.map(|v| format!("{v:.4}")), "-"),
                opt(r.gap.map(|v| format!("{v:+.4}")), "-"),
                opt(r.first_step_matching_baseline, "never"),
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let head = ["regime", "equal_compute_step", "val_loss", "baseline_val_loss", "gap", "first_step_matching_baseline"];
        w.write_record(head).expect("in-memory write");
        for r in &self.regimes {
            w.write_record([
                r.name.clone(),
                opt(r.equal_compute_step, "not reached"),
                opt(r.val_loss, ""),
                opt(self.baseline_val_loss, ""),
                opt(r.gap, ""),
                opt(r.first_step_matching_baseline, ""),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(costs: &[i128], vals: &[Option<f64>]) -> RunTrace {
        RunTrace {
            rows: costs
                .iter()
                .zip(vals)
                .enumerate()
                .map(|(i, (&c, &v))| TraceRow {
                    step: i as u64 + 1,
                    tokens: i as u64 + 1,
                    cum_cost: Rational::from_integer(c),
                    mode: "x".into(),
                    train_loss: Some(1.0),
                    val_loss: v,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_traces_have_zero_gap() {
        let t = trace(&[2, 4, 6], &[Some(3.0), Some(2.5), Some(2.0)]);
        let rep = compare(&t, &[("same".into(), t.clone())], 3).unwrap();
        let r = &rep.regimes[0];
        assert_eq!(r.equal_compute_step, Some(3));
        assert_eq!(r.gap, Some(0.0));
        assert_eq!(r.first_step_matching_baseline, Some(3));
    }

    #[test]
    fn finds_first_step_at_or_above_cost() {
        let base = trace(&[2, 4, 6], &[None, None, Some(2.0)]);
        let inc = trace(&[1, 2, 4, 5, 7, 9], &[None, None, None, Some(2.6), Some(2.4), Some(1.9)]);
        let rep = compare(&base, &[("inc".into(), inc)], 3).unwrap();
        let r = &rep.regimes[0];
        assert_eq!(r.equal_compute_step, Some(5));
        assert!((r.gap.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(r.first_step_matching_baseline, Some(6));
        assert!(rep.to_text().contains("inc"));
    }

    #[test]
    fn short_trace_is_not_reached() {
        let base = trace(&[2, 4, 6], &[None, None, Some(2.0)]);
        let inc = trace(&[1, 2], &[None, Some(3.0)]);
        let rep = compare(&base, &[("short".into(), inc)], 3).unwrap();
        assert_eq!(rep.regimes[0].equal_compute_step, None);
        assert!(rep.to_text().contains("not reached"));
        assert!(compare(&base, &[], 4).is_err());
    }
}
