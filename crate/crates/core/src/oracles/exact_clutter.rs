use nalgebra::{DMatrix, DVector};

use crate::clutter::ClutterModel;
use crate::gaussian::special::{log_normal_pdf_spherical, log_sum_exp, LN_2PI};
use crate::{Error, Result};

/// Largest `n` for which the `2^n` mixture is expanded.
pub const MAX_EXACT_OBSERVATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosteriorSummary {
    pub log_evidence: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub component_count: usize,
}

/// One inlier/clutter assignment of the posterior mixture: the Gaussian
/// `N(mean, variance·I)` carrying unnormalized mass `exp(log_weight)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterComponent {
    /// Bit `i` set means observation `i` is an inlier.
    pub inliers: u32,
    pub log_weight: f64,
    pub mean: DVector<f64>,
    pub variance: f64,
}

/// Every component of the exact posterior with non-zero mass.
///
/// For an inlier set `S` of size `k`, the data in `S` have the conjugate
/// marginal likelihood
/// `-(kd/2) ln 2π - (d/2) ln(1 + k v₀) - ½ (Σ‖y‖² - v₀ ‖Σy‖²/(1 + k v₀))`,
/// the remaining points contribute `N(y; 0, cI)` each, and the assignment
/// itself has probability `(1-w)^k w^(n-k)`.
pub fn exact_clutter_components(model: &ClutterModel) -> Result<Vec<ClutterComponent>> {
    let n = model.n();
    if n > MAX_EXACT_OBSERVATIONS {
        return Err(Error::TooManyObservations { n, limit: MAX_EXACT_OBSERVATIONS });
    }
    let d = model.dim;
    let v0 = model.prior_variance;
    let w = model.w;
    let zero = DVector::zeros(d);
    let clutter_log: Vec<f64> = model
        .data
        .iter()
        .map(|y| log_normal_pdf_spherical(y, &zero, model.clutter_variance))
        .collect();
    let sq_norms: Vec<f64> = model.data.iter().map(|y| y.norm_squared()).collect();
    let (ln_in, ln_out) = ((1.0 - w).ln(), w.ln());

    let mut components = Vec::new();
    for mask in 0u32..(1u32 << n) {
        let k = mask.count_ones() as usize;
        // Written out so that 0·ln 0 contributes 0 when w is 0 or 1.
        let mut log_weight = if k > 0 { k as f64 * ln_in } else { 0.0 } + if n > k { (n - k) as f64 * ln_out } else { 0.0 };
        if log_weight == f64::NEG_INFINITY {
            continue;
        }
        let mut sum_y = DVector::zeros(d);
        let mut sum_yy = 0.0;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                sum_y += &model.data[i];
                sum_yy += sq_norms[i];
            } else {
                log_weight += clutter_log[i];
            }
        }
        let kf = k as f64;
        let df = d as f64;
        let denom = 1.0 + kf * v0;
        log_weight += -0.5 * kf * df * LN_2PI - 0.5 * df * denom.ln()
            - 0.5 * (sum_yy - v0 * sum_y.norm_squared() / denom);
        components.push(ClutterComponent { inliers: mask, log_weight, mean: sum_y * (v0 / denom), variance: v0 / denom });
    }
    Ok(components)
}

/// Exact evidence and posterior moments of the clutter model by expanding
/// the `2^n` inlier/clutter assignments.
pub fn exact_clutter(model: &ClutterModel) -> Result<ExactPosteriorSummary> {
    let components = exact_clutter_components(model)?;
    let d = model.dim;
    let log_weights: Vec<f64> = components.iter().map(|c| c.log_weight).collect();
    let log_evidence = log_sum_exp(log_weights.iter().copied());
    let probs: Vec<f64> = log_weights.iter().map(|l| (l - log_evidence).exp()).collect();

    let mut mean = DVector::zeros(d);
    for (p, c) in probs.iter().zip(&components) {
        mean.axpy(*p, &c.mean, 1.0);
    }
    let mut covariance = DMatrix::zeros(d, d);
    for (p, c) in probs.iter().zip(&components) {
        let dev = &c.mean - &mean;
        covariance += (&dev * dev.transpose()) * *p;
        for j in 0..d {
            covariance[(j, j)] += p * c.variance;
        }
    }
    Ok(ExactPosteriorSummary { log_evidence, mean, covariance, component_count: components.len() })
}
