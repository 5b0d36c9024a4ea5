//! Step-level plan of an incremental run: stage boundaries, the directive at
//! each boundary and where new blocks enter.
//!
//! cargo run --example schedule_plan -- [layers] [stages] [inc_steps]

use layerwise::cost::{CostParams, Rational};
use layerwise::harness::steps_to_match;
use layerwise::schedule::StagePlan;

fn main() -> layerwise::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<u64>().ok());
    let layers = args.next().flatten().unwrap_or(8) as usize;
    let stages = args.next().flatten().unwrap_or(4) as usize;
    let inc = args.next().flatten().unwrap_or(1000);
    let draft = StagePlan::build(layers, stages, inc, 0, Rational::new(1, 2))?;
    let cont = steps_to_match(&draft, &CostParams::new(layers, stages)?);
    let plan = StagePlan::build(layers, stages, inc, cont, Rational::new(1, 2))?;
    for b in plan.bounds() {
        let d = plan.directive_at(b.start);
        println!(
            "stage {}: steps {}..{} (phase 2 from {}), depth {}, trains blocks {}..={}, adds {:?}",
            b.stage,
            b.start,
            b.end,
            b.phase2_start,
            d.active_depth,
            d.grad_depth_lo,
            d.active_depth,
            plan.groups_added_at(b.start)
        );
    }
    println!("continual: steps {inc}..{} at full depth", plan.total_steps());
    print!("\n{}", plan.describe());
    Ok(())
}
