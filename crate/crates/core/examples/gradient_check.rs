//! Analytic gradients of every kernel and of a composed two-block model
//! against central finite differences, in f64.
//!
//! cargo run --example gradient_check -- [seed]

use layerwise::gradcheck::{check_composed_model, check_kernels};

fn main() -> layerwise::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    for c in check_kernels(seed)?.into_iter().chain(check_composed_model(seed, 2)?) {
        println!("{:<28} {:.2e}", c.name, c.rel_err);
    }
    Ok(())
}
