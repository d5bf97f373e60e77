//! Fixed-point diagnostics: the EP energy and its moment-matching conditions.
//!
//! With the prior `p` kept exact, `q ∝ p·exp(Σ_j f_j ν_j)` and each cavity
//! `q\i ∝ p·exp(Σ_j f_j λ_ij)`. The energy is
//!
//! ```text
//! (n-1) ln ∫ p e^{f·ν} - Σ_i ln ∫ t_i p e^{f·λ_i}
//! ```
//!
//! subject to `(n-1) ν = Σ_i λ_i`. Both integrals are closed-form for Gaussian
//! families: `ln ∫ p e^{f·η} = A(p + η) - A(p)` and
//! `ln ∫ t_i p e^{f·λ_i} = ln Z_i + A(q\i) - A(p)`.

use serde::Serialize;

use super::ModelBinding;
use crate::gaussian::{Cavity, OpTally};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    /// Energy value; `None` when some cavity is improper.
    pub objective: Option<f64>,
    /// `max_j |(n-1)ν_j - Σ_i λ_ij|`.
    pub constraint_residual: f64,
    /// `max_j |E_q[f_j] - E_p̂i[f_j]|` per site; `None` marks an unevaluable site.
    pub moment_residuals: Vec<Option<f64>>,
}

impl EnergyReport {
    pub fn unevaluable(&self) -> Vec<usize> {
        self.moment_residuals
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.is_none().then_some(i))
            .collect()
    }

    pub fn max_moment_residual(&self) -> f64 {
        self.moment_residuals.iter().flatten().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointCheck {
    /// Per-site `max_j |E_q[f_j] - E_p̂i[f_j]|`; `None` when the cavity is improper.
    pub residuals: Vec<Option<f64>>,
    /// Per-site disagreement between the analytic tilted moments and the
    /// quadrature oracle, when the model provides one.
    pub oracle_gaps: Vec<Option<f64>>,
}

impl FixedPointCheck {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn max_oracle_gap(&self) -> f64 {
        self.oracle_gaps.iter().flatten().copied().fold(0.0, f64::max)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rebuilds every cavity, refits the tilted distribution and reports how far
/// `q`'s expected statistics are from each tilted distribution's.
pub fn check_fixed_point<M: ModelBinding>(model: &M, posterior: &M::Posterior, sites: &[M::Site]) -> Result<FixedPointCheck> {
    let stats_q = model.expected_statistics(posterior);
    let mut tally = OpTally::new();
    let mut residuals = Vec::with_capacity(sites.len());
    let mut oracle_gaps = Vec::with_capacity(sites.len());
    for (i, site) in sites.iter().enumerate() {
        let Cavity::Proper(cavity) = model.divide_out(posterior, site, &mut tally) else {
            residuals.push(None);
            oracle_gaps.push(None);
            continue;
        };
        let tilted = model.moment_match(&cavity, i, &mut tally)?;
        let stats_tilted = model.expected_statistics(&tilted.posterior);
        residuals.push(Some(max_abs_diff(&stats_q, &stats_tilted)));
        let gap = match model.quadrature_moment_match(&cavity, i) {
            Some(oracle) => {
                let oracle = oracle?;
                let stats_oracle = model.expected_statistics(&oracle.posterior);
                Some(max_abs_diff(&stats_tilted, &stats_oracle))
            }
            None => None,
        };
        oracle_gaps.push(gap);
    }
    Ok(FixedPointCheck { residuals, oracle_gaps })
}

/// Evaluates the energy, its constraint, and the stationarity residuals at
/// `(posterior, sites)`, recovering `ν` from `q` and `λ_i` from `q\i`.
pub fn ep_energy<M: ModelBinding>(model: &M, posterior: &M::Posterior, sites: &[M::Site]) -> Result<EnergyReport> {
    let n = sites.len();
    let prior = model.prior();
    let eta_prior = model.natural_parameters(&prior)?;
    let eta_q = model.natural_parameters(posterior)?;
    let nu: Vec<f64> = eta_q.iter().zip(&eta_prior).map(|(a, b)| a - b).collect();
    let a_prior = model.log_partition(&prior)?;
    let a_q = model.log_partition(posterior)?;
    let stats_q = model.expected_statistics(posterior);

    let mut lambda_sum = vec![0.0; nu.len()];
    let mut objective = Some((n as f64 - 1.0) * (a_q - a_prior));
    let mut moment_residuals = Vec::with_capacity(n);
    let mut tally = OpTally::new();
    for (i, site) in sites.iter().enumerate() {
        // λ_i is defined from natural parameters even when the cavity is not
        // normalizable, so the constraint stays checkable.
        let eta_site = model.site_natural_parameters(site);
        for (acc, (nu_j, s_j)) in lambda_sum.iter_mut().zip(nu.iter().zip(&eta_site)) {
            *acc += nu_j - s_j;
        }
        match model.divide_out(posterior, site, &mut tally) {
            Cavity::Proper(cavity) => {
                let tilted = model.moment_match(&cavity, i, &mut tally)?;
                let a_cav = model.log_partition(&cavity)?;
                if let Some(obj) = objective.as_mut() {
                    *obj -= tilted.log_z + a_cav - a_prior;
                }
                let stats_tilted = model.expected_statistics(&tilted.posterior);
                moment_residuals.push(Some(max_abs_diff(&stats_q, &stats_tilted)));
            }
            Cavity::Improper => {
                objective = None;
                moment_residuals.push(None);
            }
        }
    }
    let scale = n as f64 - 1.0;
    let constraint_residual = nu
        .iter()
        .zip(&lambda_sum)
        .map(|(nu_j, l_j)| (scale * nu_j - l_j).abs())
        .fold(0.0, f64::max);
    Ok(EnergyReport { objective, constraint_residual, moment_residuals })
}
