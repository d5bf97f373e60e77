use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bpm::{bpm_cavity, bpm_moment_match};
use crate::clutter::clutter_moment_match;
use crate::engine::EpOptions;
use crate::factor_graph::{loopy_ep, random_tree};
use crate::gaussian::{symmetrize, Cavity, FullGaussian, OpTally, RankOneSite, SphericalGaussian};
use crate::oracles::{bpm_tilted_quadrature, clutter_tilted_quadrature, enumerate_discrete};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheckOptions {
    /// Random cases per moment-matching battery.
    pub cases: usize,
    pub seed: u64,
    /// Agreement required between analytic and quadrature moments.
    pub tolerance: f64,
    /// Agreement required between loopy EP on trees and enumeration.
    pub tree_tolerance: f64,
    pub trees: usize,
}

impl Default for OracleCheckOptions {
    fn default() -> Self {
        Self { cases: 200, seed: 0, tolerance: 1e-8, tree_tolerance: 1e-10, trees: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * normal(rng))
}

/// A random SPD matrix `AAᵀ/d + 0.1 I`.
fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    let mut m = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
    symmetrize(&mut m);
    m
}

/// Relative disagreement of two scalars, measured against `scale` when the
/// reference is near zero.
fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / b.abs().max(scale)
}

/// Worst relative disagreement between the analytic clutter projection and
/// quadrature over random cavities, observations, `d ∈ {1, 2, 3}` and `w`.
///
/// Mean errors are relative to `max(|m|, √v)`; variance and normalizer
/// errors are plain relative errors.
pub fn clutter_battery(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let d = 1 + case % 3;
        let v = 10f64.powf(rng.random_range(-1.5..1.5));
        let cavity = SphericalGaussian::new(random_vector(&mut rng, d, 3.0), v)?;
        let spread = rng.random_range(0.5..4.0);
        let y = &cavity.mean + random_vector(&mut rng, d, spread);
        let w = rng.random_range(0.0..1.0);
        let analytic = clutter_moment_match(&cavity, &y, w, 10.0, &mut OpTally::new())?;
        let (quad, z) = clutter_tilted_quadrature(&cavity, &y, w, 10.0)?;
        let sd = analytic.posterior.variance.sqrt();
        for k in 0..d {
            worst = worst.max(rel(analytic.posterior.mean[k], quad.mean[k], sd));
        }
        worst = worst.max(rel(analytic.posterior.variance, quad.variance, 0.0));
        worst = worst.max(rel(analytic.log_z.exp(), z, 0.0));
    }
    Ok(worst)
}

/// Worst relative disagreement between the analytic probit projection and
/// directional quadrature, `d ≤ 5`, with and without slack.
///
/// Mean errors are relative to `max(|m_j|, √V_jj)`, covariance errors to
/// `√(V_jj V_kk)`.
pub fn bpm_battery(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let d = 1 + case % 5;
        let cavity = FullGaussian::new(random_vector(&mut rng, d, 1.5), random_spd(&mut rng, d))?;
        let u = random_vector(&mut rng, d, 1.0);
        let noise = if case % 2 == 0 { 0.0 } else { 10f64.powf(rng.random_range(-2.0..1.0)) };
        let analytic = bpm_moment_match(&cavity, &u, noise, &mut OpTally::new())?;
        let (quad, z) = bpm_tilted_quadrature(&cavity, &u, noise)?;
        let a = &analytic.posterior;
        for j in 0..d {
            worst = worst.max(rel(a.mean[j], quad.mean[j], a.covariance[(j, j)].sqrt()));
            for k in 0..d {
                let scale = (a.covariance[(j, j)] * a.covariance[(k, k)]).sqrt();
                worst = worst.max(rel(a.covariance[(j, k)], quad.covariance[(j, k)], scale));
            }
        }
        worst = worst.max(rel(analytic.log_z.exp(), z, 0.0));
    }
    Ok(worst)
}

/// Worst absolute disagreement between the Sherman–Morrison cavity and
/// dense natural-parameter subtraction.
pub fn cavity_battery(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < cases {
        let d = 1 + checked % 5;
        let post = FullGaussian::new(random_vector(&mut rng, d, 1.0), random_spd(&mut rng, d))?;
        let u = random_vector(&mut rng, d, 1.0);
        let s2 = u.dot(&(&post.covariance * &u));
        // Keep the cavity comfortably proper: τ s² ≤ 0.8.
        let tau = rng.random_range(0.0..0.8) / s2;
        let site = RankOneSite { direction: u.iter().copied().collect(), precision: tau, shift: normal(&mut rng), log_scale: 0.0 };
        let Cavity::Proper(cav) = bpm_cavity(&post, &site, &mut OpTally::new()) else {
            continue;
        };
        let lam = post.precision()? - &u * u.transpose() * tau;
        let h = post.precision()? * &post.mean - &u * site.shift;
        let v = lam.try_inverse().ok_or(crate::Error::DegenerateCovariance)?;
        worst = worst.max((&cav.covariance - &v).amax());
        worst = worst.max((&cav.mean - v * h).amax());
        checked += 1;
    }
    Ok(worst)
}

/// Worst error of converged loopy EP on random trees against enumeration,
/// over marginals (absolute) and log evidence (absolute).
pub fn tree_battery(trees: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let opts = EpOptions { tolerance: 1e-13, max_sweeps: 500, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trees {
        let n = rng.random_range(2..=8);
        let net = random_tree(n, 4, rng.random());
        let ep = loopy_ep(&net, &opts)?;
        let exact = enumerate_discrete(&net)?;
        for (a, b) in ep.beliefs.beliefs.iter().zip(&exact.marginals) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        worst = worst.max((ep.log_evidence - exact.log_partition).abs());
        if !ep.converged {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Runs every analytic-versus-oracle battery.
pub fn oracle_check(opts: &OracleCheckOptions) -> Result<Vec<CheckRow>> {
    let row = |name, cases, max_error: f64, tolerance| CheckRow { name, cases, max_error, tolerance, passed: max_error <= tolerance };
    Ok(vec![
        row("clutter moments vs quadrature", opts.cases, clutter_battery(opts.cases, opts.seed)?, opts.tolerance),
        row("probit moments vs quadrature", opts.cases, bpm_battery(opts.cases, opts.seed)?, opts.tolerance),
        row("rank-one cavity vs dense", opts.cases, cavity_battery(opts.cases, opts.seed)?, 1e-12),
        row("loopy EP on trees vs enumeration", opts.trees, tree_battery(opts.trees, opts.seed)?, opts.tree_tolerance),
    ])
}
