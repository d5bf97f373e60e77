//! One-dimensional clutter problem: ADF and EP against the exact posterior.
//!
//! `cargo run --example clutter_adf_vs_ep -- [seed]`

use ep_core::clutter::{generate_clutter_data, ClutterDataSpec};
use ep_core::engine::{run_adf, run_ep_observed, EpOptions};
use ep_core::oracles::exact_clutter;

fn main() -> ep_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let model = generate_clutter_data(&ClutterDataSpec::new(vec![2.0], 12, 0.5, seed))?;
    let exact = exact_clutter(&model)?;
    println!("exact:  mean {:>9.5}  var {:>8.5}  log Z {:>9.5}", exact.mean[0], exact.covariance[(0, 0)], exact.log_evidence);

    let adf = run_adf(&model, &(0..model.n()).collect::<Vec<_>>())?;
    println!("ADF:    mean {:>9.5}  var {:>8.5}  log Z {:>9.5}", adf.posterior.mean[0], adf.posterior.variance, adf.log_evidence);

    let opts = EpOptions { tolerance: 1e-6, max_sweeps: 50, ..Default::default() };
    let ep = run_ep_observed(&model, &opts, |snap| {
        println!("  sweep {:>2}: mean {:>9.5}  max site change {:.2e}", snap.sweep, snap.posterior.mean[0], snap.max_change);
    })?;
    println!(
        "EP:     mean {:>9.5}  var {:>8.5}  log Z {:>9.5}  ({} sweeps, converged {})",
        ep.posterior.mean[0], ep.posterior.variance, ep.log_evidence, ep.sweeps, ep.converged
    );
    Ok(())
}
