//! Fixed-point diagnostics: constraint and moment-matching residuals of the
//! EP energy, compared before and after convergence.

use ep_core::clutter::{generate_clutter_data, ClutterDataSpec};
use ep_core::engine::{check_fixed_point, ep_energy, run_ep, EpOptions};

fn main() -> ep_core::Result<()> {
    let model = generate_clutter_data(&ClutterDataSpec::new(vec![2.0], 12, 0.5, 3))?;
    for max_sweeps in [1, 2, 50] {
        let ep = run_ep(&model, &EpOptions { tolerance: 1e-9, max_sweeps, ..Default::default() })?;
        let energy = ep_energy(&model, &ep.posterior, &ep.sites)?;
        let fixed = check_fixed_point(&model, &ep.posterior, &ep.sites)?;
        println!(
            "{max_sweeps:>2} sweeps: objective {:?}, constraint {:.1e}, moments {:.1e}, oracle gap {:.1e}",
            energy.objective,
            energy.constraint_residual,
            energy.max_moment_residual(),
            fixed.max_oracle_gap()
        );
    }
    Ok(())
}
