//! Exact cost accounting: closed form, brute-force stage sum and the step
//! meter agree, and each stage count has its own equal-compute point.
//!
//! cargo run --example cost_model -- [layers] [baseline_steps]

use layerwise::cost::{
    incremental_cost_brute_force, incremental_cost_closed_form, meter_exact_schedule, summarize, CostParams,
    Rational,
};

fn main() -> layerwise::Result<()> {
    let mut args = std::env::args().skip(1);
    let layers: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let t = Rational::from_integer(args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000));
    for stages in (1..=layers).filter(|s| layers % s == 0) {
        let p = CostParams::new(layers, stages)?;
        let closed = incremental_cost_closed_form(&p, t)?;
        let brute = incremental_cost_brute_force(&p, t)?;
        let metered = meter_exact_schedule(&p, Rational::new(1, 2), t, Rational::from_integer(0))?.total();
        assert!(closed == brute && brute == metered);
        let s = summarize(&p, t)?;
        println!(
            "S={stages:<3} C_inc={:<10} T_cont={:<10} equal-compute step {}",
            closed, s.equal.t_cont, s.equal.step
        );
    }
    Ok(())
}
