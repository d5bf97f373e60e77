use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::gaussian::FullGaussian;
use crate::{Error, Result};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleEstimate<T> {
    pub value: T,
    pub standard_error: T,
    pub sample_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceEstimate {
    /// `p(D)` on the linear scale; may underflow when the log evidence is
    /// very negative, in which case use `log_evidence`.
    pub evidence: SampleEstimate<f64>,
    pub log_evidence: f64,
    /// Self-normalized posterior mean.
    pub mean: SampleEstimate<Vec<f64>>,
    /// Kish effective sample size `(Σw)² / Σw²`.
    pub ess: f64,
}

/// Draws `samples` times from the prior with a ChaCha8 stream seeded by
/// `seed` and reweights by the likelihood.
///
/// Samples are regenerated from the same stream on each pass rather than
/// stored, so memory stays `O(samples)` scalars regardless of dimension.
pub fn importance_sampler(
    log_likelihood: impl Fn(&DVector<f64>) -> f64,
    prior: &FullGaussian,
    samples: usize,
    seed: u64,
) -> Result<ImportanceEstimate> {
    if samples == 0 {
        return Err(Error::Config("importance sampler needs at least one sample".into()));
    }
    let d = prior.dim();
    let chol = prior.covariance.clone().cholesky().ok_or(Error::DegenerateCovariance)?;
    let l = chol.l();
    let draw = |rng: &mut ChaCha8Rng| {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &prior.mean + &l * z
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_w: Vec<f64> = (0..samples).map(|_| log_likelihood(&draw(&mut rng))).collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateWeights);
    }
    let weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let s = samples as f64;
    let sum_w: f64 = weights.iter().sum();
    let sum_w2: f64 = weights.iter().map(|w| w * w).sum();
    let mean_w = sum_w / s;
    let var_w = if samples > 1 {
        weights.iter().map(|w| (w - mean_w).powi(2)).sum::<f64>() / (s - 1.0)
    } else {
        0.0
    };
    let scale = max.exp();
    let evidence = SampleEstimate {
        value: mean_w * scale,
        standard_error: (var_w / s).sqrt() * scale,
        sample_count: samples,
        seed,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = DVector::zeros(d);
    for w in &weights {
        let x = draw(&mut rng);
        mean.axpy(*w / sum_w, &x, 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spread = DVector::<f64>::zeros(d);
    for w in &weights {
        let dev = draw(&mut rng) - &mean;
        spread += dev.map(|v| v * v) * (w * w);
    }
    let se = spread.map(|v| v.sqrt() / sum_w);

    Ok(ImportanceEstimate {
        evidence,
        log_evidence: max + mean_w.ln(),
        mean: SampleEstimate {
            value: mean.iter().copied().collect(),
            standard_error: se.iter().copied().collect(),
            sample_count: samples,
            seed,
        },
        ess: sum_w * sum_w / sum_w2,
    })
}
