//! Generic assumed-density filtering and expectation propagation.
//!
//! A model plugs in through [`ModelBinding`]: it owns the exact prior term,
//! the per-term moment-matching projection, and the conversion between a
//! (cavity, projection) pair and a site `t̃_i = Z_i q / q\i`. The driver owns
//! the sweep loop, damping, the improper-cavity policy, and convergence.

mod energy;

pub use energy::{check_fixed_point, ep_energy, EnergyReport, FixedPointCheck};

use std::fmt::Debug;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gaussian::{Cavity, NaturalSpherical, OpTally, RankOneSite};
use crate::{Error, Result};

/// A term approximation in natural parameters.
pub trait Site: Clone + Debug {
    /// Max absolute difference over precision and shift components.
    fn natural_distance(&self, other: &Self) -> f64;
    /// `(1-γ)·self + γ·new` in every natural parameter, including `log_scale`.
    fn interpolate(&self, new: &Self, gamma: f64) -> Self;
    fn is_vacuous(&self) -> bool;
}

impl Site for NaturalSpherical {
    fn natural_distance(&self, other: &Self) -> f64 {
        NaturalSpherical::natural_distance(self, other)
    }

    fn interpolate(&self, new: &Self, gamma: f64) -> Self {
        let mix = |a: f64, b: f64| (1.0 - gamma) * a + gamma * b;
        Self {
            precision: mix(self.precision, new.precision),
            shift: self.shift.iter().zip(&new.shift).map(|(a, b)| mix(*a, *b)).collect(),
            log_scale: mix(self.log_scale, new.log_scale),
        }
    }

    fn is_vacuous(&self) -> bool {
        NaturalSpherical::is_vacuous(self)
    }
}

impl Site for RankOneSite {
    fn natural_distance(&self, other: &Self) -> f64 {
        RankOneSite::natural_distance(self, other)
    }

    fn interpolate(&self, new: &Self, gamma: f64) -> Self {
        let mix = |a: f64, b: f64| (1.0 - gamma) * a + gamma * b;
        Self {
            direction: self.direction.clone(),
            precision: mix(self.precision, new.precision),
            shift: mix(self.shift, new.shift),
            log_scale: mix(self.log_scale, new.log_scale),
        }
    }

    fn is_vacuous(&self) -> bool {
        RankOneSite::is_vacuous(self)
    }
}

/// Result of projecting a tilted distribution `t_i · q\i / Z_i` back onto the
/// approximating family.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<G> {
    pub posterior: G,
    pub log_z: f64,
}

/// The contract between a model and the ADF/EP driver.
///
/// Terms are indexed `0..site_count()`; the prior is incorporated exactly
/// and is not one of them. Sufficient statistics `f_j` are whatever
/// [`expected_statistics`](Self::expected_statistics) and
/// [`natural_parameters`](Self::natural_parameters) enumerate, in the same
/// order.
pub trait ModelBinding {
    type Posterior: Clone + Debug;
    type Site: Site;

    fn site_count(&self) -> usize;

    fn prior(&self) -> Self::Posterior;

    fn vacuous_site(&self, index: usize) -> Self::Site;

    /// `q\i ∝ q / t̃_i`. A vacuous site must return `posterior` unchanged.
    fn divide_out(&self, posterior: &Self::Posterior, site: &Self::Site, tally: &mut OpTally) -> Cavity<Self::Posterior>;

    /// `q ∝ q\i · t̃_i`.
    fn include(&self, cavity: &Self::Posterior, site: &Self::Site, tally: &mut OpTally) -> Result<Self::Posterior>;

    /// KL projection of `t_i · cavity` with its normalizer `Z_i`.
    fn moment_match(&self, cavity: &Self::Posterior, index: usize, tally: &mut OpTally) -> Result<Projection<Self::Posterior>>;

    /// `t̃_i = Z_i q / q\i` for the projection of term `index`.
    fn site_update(
        &self,
        cavity: &Self::Posterior,
        projection: &Projection<Self::Posterior>,
        index: usize,
        tally: &mut OpTally,
    ) -> Self::Site;

    /// The model's evidence formula evaluated from the current sites.
    fn log_evidence(&self, posterior: &Self::Posterior, sites: &[Self::Site]) -> Result<f64>;

    /// `E_q[f_j]` for every sufficient statistic.
    fn expected_statistics(&self, posterior: &Self::Posterior) -> Vec<f64>;

    /// Coefficients of `f_j` in `ln q`.
    fn natural_parameters(&self, posterior: &Self::Posterior) -> Result<Vec<f64>>;

    /// Coefficients of `f_j` in `ln t̃_i`.
    fn site_natural_parameters(&self, site: &Self::Site) -> Vec<f64>;

    /// `ln ∫ exp(Σ_j f_j(x) η_j) dx` at the posterior's natural parameters.
    fn log_partition(&self, posterior: &Self::Posterior) -> Result<f64>;

    /// Independent tilted moments by numerical integration, if the model has
    /// them.
    fn quadrature_moment_match(&self, _cavity: &Self::Posterior, _index: usize) -> Option<Result<Projection<Self::Posterior>>> {
        None
    }
}

/// Order in which sites are revisited during EP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `0, 1, …, n-1` every sweep.
    #[default]
    Sequential,
    /// A fresh ChaCha8-seeded shuffle every sweep.
    RandomPermutation { seed: u64 },
    /// The same caller-supplied permutation every sweep.
    Fixed { order: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Step size γ ∈ (0, 1]; 1 is undamped.
    pub damping: f64,
    pub schedule: Schedule,
    pub skip_improper_cavity: bool,
}

impl Default for EpOptions {
    fn default() -> Self {
        Self { tolerance: 1e-4, max_sweeps: 100, damping: 1.0, schedule: Schedule::Sequential, skip_improper_cavity: true }
    }
}

impl EpOptions {
    pub fn validate(&self, site_count: usize) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if let Schedule::Fixed { order } = &self.schedule {
            validate_order(order, site_count)?;
        }
        Ok(())
    }
}

pub(crate) fn validate_order(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::Config(format!("order has {} entries for {n} terms", order.len())));
    }
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config(format!("order is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// Produces the visiting order for each sweep.
pub(crate) struct SweepOrder {
    schedule: Schedule,
    n: usize,
    rng: Option<ChaCha8Rng>,
}

impl SweepOrder {
    pub(crate) fn new(schedule: &Schedule, n: usize) -> Self {
        let rng = match schedule {
            Schedule::RandomPermutation { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        Self { schedule: schedule.clone(), n, rng }
    }

    pub(crate) fn next_order(&mut self) -> Vec<usize> {
        match &self.schedule {
            Schedule::Sequential => (0..self.n).collect(),
            Schedule::Fixed { order } => order.clone(),
            Schedule::RandomPermutation { .. } => {
                let mut order: Vec<usize> = (0..self.n).collect();
                order.shuffle(self.rng.as_mut().expect("seeded"));
                order
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Site visits skipped because the cavity was improper.
    pub skipped_sites: usize,
    /// Improper cavities encountered, including any that aborted the run.
    pub improper_cavities: usize,
    pub tally: OpTally,
    /// Max natural-parameter change in the final sweep.
    pub last_change: f64,
    /// `Σ ln Z_i` over the site updates of the final sweep.
    pub sweep_log_z: f64,
}

#[derive(Debug, Clone)]
pub struct EpResult<G, S> {
    pub posterior: G,
    pub sites: Vec<S>,
    pub log_evidence: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

/// State handed to a sweep observer after each completed sweep.
#[derive(Debug)]
pub struct SweepSnapshot<'a, G, S> {
    pub sweep: usize,
    pub posterior: &'a G,
    pub sites: &'a [S],
    pub max_change: f64,
    pub sweep_log_z: f64,
    pub tally: OpTally,
}

/// `(1-γ)·old + γ·new` in natural parameters; `γ = 1` returns `new` exactly.
pub fn apply_damping<S: Site>(old: &S, new: &S, gamma: f64) -> S {
    if gamma == 1.0 {
        new.clone()
    } else {
        old.interpolate(new, gamma)
    }
}

/// One pass of assumed-density filtering in the given order.
///
/// Each term is folded into the running posterior once; the evidence is
/// `Σ ln Z_i`.
pub fn run_adf<M: ModelBinding>(model: &M, order: &[usize]) -> Result<EpResult<M::Posterior, M::Site>> {
    let n = model.site_count();
    validate_order(order, n)?;
    let mut tally = OpTally::new();
    let mut posterior = model.prior();
    let mut sites: Vec<M::Site> = (0..n).map(|i| model.vacuous_site(i)).collect();
    let mut log_evidence = 0.0;
    for &i in order {
        let projection = model
            .moment_match(&posterior, i, &mut tally)
            .map_err(|e| Error::MomentMatch { index: i, source: Box::new(e) })?;
        sites[i] = model.site_update(&posterior, &projection, i, &mut tally);
        log_evidence += projection.log_z;
        posterior = projection.posterior;
    }
    Ok(EpResult {
        posterior,
        sites,
        log_evidence,
        sweeps: 1,
        converged: true,
        diagnostics: Diagnostics { tally, sweep_log_z: log_evidence, ..Default::default() },
    })
}

/// Expectation propagation with vacuous initial sites.
pub fn run_ep<M: ModelBinding>(model: &M, opts: &EpOptions) -> Result<EpResult<M::Posterior, M::Site>> {
    run_ep_observed(model, opts, |_| {})
}

/// [`run_ep`], calling `observer` after every completed sweep.
pub fn run_ep_observed<M, F>(model: &M, opts: &EpOptions, mut observer: F) -> Result<EpResult<M::Posterior, M::Site>>
where
    M: ModelBinding,
    F: FnMut(&SweepSnapshot<'_, M::Posterior, M::Site>),
{
    let n = model.site_count();
    opts.validate(n)?;
    let mut posterior = model.prior();
    let mut sites: Vec<M::Site> = (0..n).map(|i| model.vacuous_site(i)).collect();
    let mut diagnostics = Diagnostics::default();
    let mut tally = OpTally::new();

    if n == 0 {
        let log_evidence = model.log_evidence(&posterior, &sites)?;
        return Ok(EpResult { posterior, sites, log_evidence, sweeps: 0, converged: true, diagnostics });
    }

    let mut orders = SweepOrder::new(&opts.schedule, n);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        let mut skipped_this_sweep = 0;
        let mut sweep_log_z = 0.0;
        for i in orders.next_order() {
            let cavity = match model.divide_out(&posterior, &sites[i], &mut tally) {
                Cavity::Proper(c) => c,
                Cavity::Improper => {
                    diagnostics.improper_cavities += 1;
                    if !opts.skip_improper_cavity {
                        return Err(Error::ImproperCavity { index: i });
                    }
                    diagnostics.skipped_sites += 1;
                    skipped_this_sweep += 1;
                    continue;
                }
            };
            let projection = model
                .moment_match(&cavity, i, &mut tally)
                .map_err(|e| Error::MomentMatch { index: i, source: Box::new(e) })?;
            sweep_log_z += projection.log_z;
            let fresh = model.site_update(&cavity, &projection, i, &mut tally);
            if opts.damping == 1.0 {
                max_change = max_change.max(fresh.natural_distance(&sites[i]));
                sites[i] = fresh;
                posterior = projection.posterior;
            } else {
                let damped = apply_damping(&sites[i], &fresh, opts.damping);
                max_change = max_change.max(damped.natural_distance(&sites[i]));
                posterior = model.include(&cavity, &damped, &mut tally)?;
                sites[i] = damped;
            }
        }
        diagnostics.last_change = max_change;
        diagnostics.sweep_log_z = sweep_log_z;
        observer(&SweepSnapshot {
            sweep: sweeps,
            posterior: &posterior,
            sites: &sites,
            max_change,
            sweep_log_z,
            tally,
        });
        if skipped_this_sweep == 0 && max_change < opts.tolerance {
            converged = true;
            break;
        }
    }
    diagnostics.tally = tally;
    let log_evidence = model.log_evidence(&posterior, &sites)?;
    Ok(EpResult { posterior, sites, log_evidence, sweeps, converged, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn damping_identity_and_midpoint() {
        let old = NaturalSpherical { precision: 0.0, shift: vec![0.0], log_scale: 0.0 };
        let new = NaturalSpherical { precision: 2.0, shift: vec![1.0], log_scale: -1.0 };
        assert_eq!(apply_damping(&old, &new, 1.0), new);
        let mid = apply_damping(&old, &new, 0.5);
        assert_eq!(mid.precision, 1.0);
        assert_eq!(mid.shift, vec![0.5]);
        assert_eq!(mid.log_scale, -0.5);
    }

    #[test]
    fn option_validation() {
        let mut opts = EpOptions::default();
        assert!(opts.validate(3).is_ok());
        opts.damping = 0.0;
        assert!(opts.validate(3).is_err());
        opts.damping = 1.0;
        opts.schedule = Schedule::Fixed { order: vec![0, 0, 1] };
        assert!(opts.validate(3).is_err());
        opts.schedule = Schedule::Fixed { order: vec![2, 0, 1] };
        assert!(opts.validate(3).is_ok());
    }

    #[test]
    fn random_schedule_is_seeded() {
        let mut a = SweepOrder::new(&Schedule::RandomPermutation { seed: 9 }, 10);
        let mut b = SweepOrder::new(&Schedule::RandomPermutation { seed: 9 }, 10);
        let first = a.next_order();
        assert_eq!(first, b.next_order());
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }
}
