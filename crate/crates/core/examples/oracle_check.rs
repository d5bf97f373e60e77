//! Analytic moment matching against quadrature and enumeration.

use ep_core::harness::{oracle_check, OracleCheckOptions};

fn main() -> ep_core::Result<()> {
    let rows = oracle_check(&OracleCheckOptions::default())?;
    for row in &rows {
        println!(
            "{:<36} {:>4} cases  max error {:.2e}  (tol {:.0e})  {}",
            row.name,
            row.cases,
            row.max_error,
            row.tolerance,
            if row.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
