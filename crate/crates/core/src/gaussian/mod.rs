//! Gaussian families, sites in natural parameters, and the arithmetic that
//! multiplies and divides them.
//!
//! Sites are kept in natural coordinates (precision, precision × mean) so that
//! zero and negative precisions, which EP produces routinely, are ordinary
//! values. A site also carries `log_scale = ln s`, the constant in front of its
//! unnormalized Gaussian form `s · exp(-½ τ ‖x - m‖²)`.

pub mod special;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
use special::LN_2PI;

/// Deterministic count of elementary floating-point operations.
///
/// Charges are per call, in units of scalar multiply-adds:
///
/// | operation                           | charge |
/// |-------------------------------------|--------|
/// | vector add / axpy / dot / norm      | `d`    |
/// | matrix-vector product               | `d²`   |
/// | symmetric rank-one update           | `d²`   |
/// | symmetrization `(A + Aᵀ)/2`         | `d²`   |
/// | scalar bookkeeping (per update)     | `1`    |
///
/// Dense factorizations (`d³`) only occur in diagnostics and evidence
/// evaluation and are charged `d³`.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTally {
    pub count: u64,
}

impl OpTally {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn charge(&mut self, ops: usize) {
        self.count += ops as u64;
    }

    #[inline]
    pub fn vector(&mut self, d: usize) {
        self.charge(d);
    }

    #[inline]
    pub fn matrix(&mut self, d: usize) {
        self.charge(d * d);
    }

    #[inline]
    pub fn scalar(&mut self) {
        self.charge(1);
    }
}

/// Outcome of removing a site from a posterior.
#[derive(Debug, Clone, PartialEq)]
pub enum Cavity<G> {
    Proper(G),
    /// The remaining precision is not positive along the site's direction.
    Improper,
}

impl<G> Cavity<G> {
    pub fn proper(self) -> Option<G> {
        match self {
            Cavity::Proper(g) => Some(g),
            Cavity::Improper => None,
        }
    }

    pub fn is_improper(&self) -> bool {
        matches!(self, Cavity::Improper)
    }
}

/// `N(m, v·I_d)`; `variance = +∞` encodes the flat (vacuous) density.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGaussian {
    pub mean: DVector<f64>,
    pub variance: f64,
}

impl SphericalGaussian {
    pub fn new(mean: DVector<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidModel("spherical Gaussian needs d >= 1".into()));
        }
        if !(variance > 0.0) {
            return Err(Error::InvalidModel(format!(
                "spherical variance must be positive, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> f64 {
        if self.variance.is_infinite() {
            0.0
        } else {
            1.0 / self.variance
        }
    }

    /// Natural shift `m / v`.
    pub fn shift(&self) -> DVector<f64> {
        &self.mean * self.precision()
    }

    /// `E[xᵀx] = mᵀm + d·v`.
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.dim() as f64 * self.variance
    }

    /// `ln ∫ exp(-½ τ xᵀx + hᵀx) dx`.
    pub fn log_partition(&self) -> f64 {
        let d = self.dim() as f64;
        let tau = self.precision();
        0.5 * d * (LN_2PI - tau.ln()) + 0.5 * self.shift().norm_squared() / tau
    }

    pub fn to_full(&self) -> FullGaussian {
        FullGaussian {
            mean: self.mean.clone(),
            covariance: DMatrix::identity(self.dim(), self.dim()) * self.variance,
        }
    }
}

/// `N(m, V)` with a dense symmetric covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl FullGaussian {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: covariance.nrows() });
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * covariance.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidModel("covariance is not symmetric".into()));
        }
        Ok(Self { mean, covariance })
    }

    pub fn standard(d: usize) -> Self {
        Self { mean: DVector::zeros(d), covariance: DMatrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// True when the covariance admits a Cholesky factorization.
    pub fn is_proper(&self) -> bool {
        self.covariance.clone().cholesky().is_some()
    }

    pub fn precision(&self) -> Result<DMatrix<f64>> {
        let chol = self.covariance.clone().cholesky().ok_or(Error::DegenerateCovariance)?;
        let mut inv = chol.inverse();
        symmetrize(&mut inv);
        Ok(inv)
    }

    pub fn log_det_covariance(&self) -> Result<f64> {
        let chol = self.covariance.clone().cholesky().ok_or(Error::DegenerateCovariance)?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>())
    }

    /// `ln ∫ exp(-½ xᵀΛx + hᵀx) dx = (d/2)ln 2π + ½ ln|V| + ½ mᵀV⁻¹m`.
    pub fn log_partition(&self) -> Result<f64> {
        let chol = self.covariance.clone().cholesky().ok_or(Error::DegenerateCovariance)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let solved = chol.solve(&self.mean);
        Ok(0.5 * self.dim() as f64 * LN_2PI + 0.5 * log_det + 0.5 * self.mean.dot(&solved))
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.covariance
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `(A + Aᵀ)/2` in place.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `A += c · u uᵀ`.
pub fn rank_one_update(a: &mut DMatrix<f64>, c: f64, u: &DVector<f64>) {
    let n = a.nrows();
    for j in 0..n {
        let cu = c * u[j];
        for i in 0..n {
            a[(i, j)] += cu * u[i];
        }
    }
}

/// Spherical site `s · exp(-½ τ ‖x - m‖²)` held as `(τ, h = τm, ln s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalSpherical {
    pub precision: f64,
    pub shift: Vec<f64>,
    pub log_scale: f64,
}

impl NaturalSpherical {
    /// The constant site `t̃ = 1`.
    pub fn vacuous(dim: usize) -> Self {
        Self { precision: 0.0, shift: vec![0.0; dim], log_scale: 0.0 }
    }

    /// The normalized density of `g`, as a site.
    pub fn from_gaussian(g: &SphericalGaussian) -> Self {
        let d = g.dim() as f64;
        Self {
            precision: g.precision(),
            shift: g.shift().iter().copied().collect(),
            log_scale: -0.5 * d * (LN_2PI + g.variance.ln()),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn is_vacuous(&self) -> bool {
        self.precision == 0.0 && self.shift.iter().all(|&h| h == 0.0) && self.log_scale == 0.0
    }

    pub fn shift_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.shift)
    }

    /// `v_i = 1/τ`, infinite for a zero-precision site.
    pub fn variance(&self) -> f64 {
        if self.precision == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.precision
        }
    }

    /// `m_i = h/τ`, undefined when `τ = 0`.
    pub fn mean(&self) -> Option<DVector<f64>> {
        (self.precision != 0.0).then(|| self.shift_vector() / self.precision)
    }

    /// `ln t̃(0) = ln s - hᵀh/(2τ)`; the `h²/τ` term is dropped when `τ = 0`.
    pub fn log_constant(&self) -> f64 {
        if self.precision == 0.0 {
            self.log_scale
        } else {
            let hh: f64 = self.shift.iter().map(|h| h * h).sum();
            self.log_scale - 0.5 * hh / self.precision
        }
    }

    /// Largest absolute change in `(τ, h)` between two sites.
    pub fn natural_distance(&self, other: &Self) -> f64 {
        self.shift
            .iter()
            .zip(&other.shift)
            .map(|(a, b)| (a - b).abs())
            .fold((self.precision - other.precision).abs(), f64::max)
    }
}

/// Rank-one site `s · exp(-½ τ (wᵀx - m)²)` along a fixed direction `x`,
/// held as `(τ, h = τm, ln s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneSite {
    pub direction: Vec<f64>,
    pub precision: f64,
    pub shift: f64,
    pub log_scale: f64,
}

impl RankOneSite {
    pub fn vacuous(direction: DVector<f64>) -> Result<Self> {
        if direction.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidModel("rank-one site direction must be non-zero".into()));
        }
        Ok(Self { direction: direction.iter().copied().collect(), precision: 0.0, shift: 0.0, log_scale: 0.0 })
    }

    pub fn direction_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.direction)
    }

    pub fn is_vacuous(&self) -> bool {
        self.precision == 0.0 && self.shift == 0.0 && self.log_scale == 0.0
    }

    pub fn variance(&self) -> f64 {
        if self.precision == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.precision
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.precision != 0.0).then(|| self.shift / self.precision)
    }

    pub fn log_constant(&self) -> f64 {
        if self.precision == 0.0 {
            self.log_scale
        } else {
            self.log_scale - 0.5 * self.shift * self.shift / self.precision
        }
    }

    pub fn natural_distance(&self, other: &Self) -> f64 {
        (self.precision - other.precision).abs().max((self.shift - other.shift).abs())
    }
}

/// Normalizes the product of spherical sites.
///
/// Returns the posterior and `ln ∫ ∏ t̃_i(x) dx`, including every site's
/// `log_scale`. A proper prior enters as [`NaturalSpherical::from_gaussian`].
pub fn combine_spherical(sites: &[NaturalSpherical], dim: usize) -> Result<(SphericalGaussian, f64)> {
    let mut precision = 0.0;
    let mut shift = DVector::zeros(dim);
    let mut log_const = 0.0;
    for site in sites {
        if site.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: site.dim() });
        }
        precision += site.precision;
        shift += site.shift_vector();
        log_const += site.log_constant();
    }
    if !(precision > 0.0) || !precision.is_finite() {
        return Err(Error::ImproperProduct);
    }
    let posterior = SphericalGaussian { mean: &shift / precision, variance: 1.0 / precision };
    Ok((posterior.clone(), log_const + posterior.log_partition()))
}

/// Normalizes `prior × ∏ rank-one sites`.
///
/// Returns the posterior and `ln ∫ prior(w) ∏ t̃_i(w) dw`. The prior is a
/// normalized density, so with no sites the normalizer is zero.
pub fn combine_rank_one(prior: &FullGaussian, sites: &[RankOneSite]) -> Result<(FullGaussian, f64)> {
    let d = prior.dim();
    let prior_precision = prior.precision()?;
    let mut precision = prior_precision.clone();
    let mut shift = &prior_precision * &prior.mean;
    let mut log_const = 0.0;
    for site in sites {
        if site.direction.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: site.direction.len() });
        }
        let x = site.direction_vector();
        rank_one_update(&mut precision, site.precision, &x);
        shift.axpy(site.shift, &x, 1.0);
        log_const += site.log_constant();
    }
    symmetrize(&mut precision);
    let chol = precision.cholesky().ok_or(Error::ImproperProduct)?;
    let mut covariance = chol.inverse();
    symmetrize(&mut covariance);
    let posterior = FullGaussian { mean: &covariance * &shift, covariance };
    let log_norm = log_const + posterior.log_partition()? - prior.log_partition()?;
    Ok((posterior, log_norm))
}

/// Removes a spherical site: `τ\ = 1/v - τ_i`, `m\ = m + v\ (τ_i m - h_i)`.
pub fn divide_out_spherical(
    posterior: &SphericalGaussian,
    site: &NaturalSpherical,
    tally: &mut OpTally,
) -> Cavity<SphericalGaussian> {
    if site.precision == 0.0 && site.shift.iter().all(|&h| h == 0.0) {
        return Cavity::Proper(posterior.clone());
    }
    let d = posterior.dim();
    tally.vector(2 * d);
    tally.scalar();
    let cavity_precision = posterior.precision() - site.precision;
    if !(cavity_precision > 0.0) || !cavity_precision.is_finite() {
        return Cavity::Improper;
    }
    let cavity_variance = 1.0 / cavity_precision;
    let correction = (&posterior.mean * site.precision - site.shift_vector()) * cavity_variance;
    Cavity::Proper(SphericalGaussian { mean: &posterior.mean + correction, variance: cavity_variance })
}

/// Multiplies a spherical site into a cavity.
pub fn include_spherical(
    cavity: &SphericalGaussian,
    site: &NaturalSpherical,
    tally: &mut OpTally,
) -> Result<SphericalGaussian> {
    let d = cavity.dim();
    tally.vector(2 * d);
    tally.scalar();
    let precision = cavity.precision() + site.precision;
    if !(precision > 0.0) {
        return Err(Error::ImproperProduct);
    }
    let shift = cavity.shift() + site.shift_vector();
    Ok(SphericalGaussian { mean: shift / precision, variance: 1.0 / precision })
}

/// Removes a rank-one site by Sherman–Morrison:
/// `V\ = V + (Vx)(Vx)ᵀ τ/(1 - τ xᵀVx)`, `m\ = m + Vx (τ xᵀm - h)/(1 - τ xᵀVx)`.
pub fn divide_out_rank_one(
    posterior: &FullGaussian,
    site: &RankOneSite,
    tally: &mut OpTally,
) -> Cavity<FullGaussian> {
    if site.precision == 0.0 && site.shift == 0.0 {
        return Cavity::Proper(posterior.clone());
    }
    let d = posterior.dim();
    let x = site.direction_vector();
    let vx = &posterior.covariance * &x;
    tally.matrix(d);
    let s2 = x.dot(&vx);
    let proj = x.dot(&posterior.mean);
    tally.vector(2 * d);
    let denom = 1.0 - site.precision * s2;
    if !(denom > 0.0) {
        return Cavity::Improper;
    }
    let mut covariance = posterior.covariance.clone();
    rank_one_update(&mut covariance, site.precision / denom, &vx);
    symmetrize(&mut covariance);
    tally.matrix(d);
    tally.matrix(d);
    let mut mean = posterior.mean.clone();
    mean.axpy((site.precision * proj - site.shift) / denom, &vx, 1.0);
    tally.vector(d);
    Cavity::Proper(FullGaussian { mean, covariance })
}

/// Multiplies a rank-one site into a cavity.
pub fn include_rank_one(cavity: &FullGaussian, site: &RankOneSite, tally: &mut OpTally) -> Result<FullGaussian> {
    let d = cavity.dim();
    let x = site.direction_vector();
    let vx = &cavity.covariance * &x;
    tally.matrix(d);
    let s2 = x.dot(&vx);
    let proj = x.dot(&cavity.mean);
    tally.vector(2 * d);
    let denom = 1.0 + site.precision * s2;
    if !(denom > 0.0) {
        return Err(Error::ImproperProduct);
    }
    let mut covariance = cavity.covariance.clone();
    rank_one_update(&mut covariance, -site.precision / denom, &vx);
    symmetrize(&mut covariance);
    tally.matrix(d);
    tally.matrix(d);
    let mut mean = cavity.mean.clone();
    mean.axpy((site.shift - site.precision * proj) / denom, &vx, 1.0);
    tally.vector(d);
    Ok(FullGaussian { mean, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn vacuous_site_leaves_prior_untouched() {
        let prior = SphericalGaussian::new(v1(0.0), 100.0).unwrap();
        let sites = [NaturalSpherical::from_gaussian(&prior), NaturalSpherical::vacuous(1)];
        let (post, log_norm) = combine_spherical(&sites, 1).unwrap();
        assert_relative_eq!(post.variance, 100.0, max_relative = 1e-14);
        assert_eq!(post.mean[0], 0.0);
        assert!(log_norm.abs() < 1e-13);
    }

    #[test]
    fn two_half_precision_sites_give_unit_variance() {
        let g = SphericalGaussian::new(v1(0.0), 2.0).unwrap();
        let site = NaturalSpherical::from_gaussian(&g);
        assert_eq!(site.precision, 0.5);
        let (post, log_norm) = combine_spherical(&[site.clone(), site], 1).unwrap();
        assert_relative_eq!(post.variance, 1.0, max_relative = 1e-15);
        assert_eq!(post.mean[0], 0.0);
        // ∫ N(x;0,2)² dx = N(0; 0, 4)
        assert_relative_eq!(log_norm, -0.5 * (LN_2PI + 4f64.ln()), max_relative = 1e-14);
    }

    #[test]
    fn rank_one_site_on_unit_prior() {
        // natural arithmetic by hand: precision 1 + 1 = 2, shift 0 + 1·1 = 1 -> N(0.5, 0.5)
        let site = RankOneSite { direction: vec![1.0], precision: 1.0, shift: 1.0, log_scale: 0.0 };
        let (post, _) = combine_rank_one(&FullGaussian::standard(1), &[site]).unwrap();
        assert_relative_eq!(post.mean[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(post.covariance[(0, 0)], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn improper_products_are_errors() {
        let site = NaturalSpherical { precision: -1.0, shift: vec![0.0], log_scale: 0.0 };
        assert!(matches!(combine_spherical(&[site], 1), Err(Error::ImproperProduct)));
        let site = RankOneSite { direction: vec![1.0], precision: -2.0, shift: 0.0, log_scale: 0.0 };
        assert!(matches!(combine_rank_one(&FullGaussian::standard(1), &[site]), Err(Error::ImproperProduct)));
    }

    #[test]
    fn divide_out_cases() {
        let mut tally = OpTally::new();
        let q = SphericalGaussian::new(v1(0.0), 1.0).unwrap();
        assert_eq!(divide_out_spherical(&q, &NaturalSpherical::vacuous(1), &mut tally), Cavity::Proper(q.clone()));

        let half = NaturalSpherical { precision: 0.5, shift: vec![0.0], log_scale: 0.0 };
        let cav = divide_out_spherical(&q, &half, &mut tally).proper().unwrap();
        assert_relative_eq!(cav.variance, 2.0, max_relative = 1e-15);
        assert_eq!(cav.mean[0], 0.0);

        let strong = NaturalSpherical { precision: 1.5, shift: vec![0.0], log_scale: 0.0 };
        assert!(divide_out_spherical(&q, &strong, &mut tally).is_improper());
    }

    #[test]
    fn rank_one_cavity_matches_dense_natural_arithmetic() {
        let q = FullGaussian::new(
            DVector::from_vec(vec![0.3, -0.8]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.2, 0.6]),
        )
        .unwrap();
        let site = RankOneSite { direction: vec![1.0, -2.0], precision: 0.35, shift: -0.4, log_scale: 0.0 };
        let cav = divide_out_rank_one(&q, &site, &mut OpTally::new()).proper().unwrap();

        let x = site.direction_vector();
        let lambda = q.precision().unwrap() - &x * x.transpose() * site.precision;
        let h = q.precision().unwrap() * &q.mean - &x * site.shift;
        let v = lambda.try_inverse().unwrap();
        let m = &v * h;
        assert!((&cav.covariance - &v).amax() <= 1e-12 * v.amax());
        assert!((&cav.mean - &m).amax() <= 1e-12 * m.amax());
    }

    #[test]
    fn rank_one_cavity_flags_improper() {
        let q = FullGaussian::standard(2);
        let site = RankOneSite { direction: vec![1.0, 0.0], precision: 1.0, shift: 0.0, log_scale: 0.0 };
        assert!(divide_out_rank_one(&q, &site, &mut OpTally::new()).is_improper());
    }

    #[test]
    fn zero_direction_rejected() {
        assert!(RankOneSite::vacuous(DVector::zeros(3)).is_err());
    }

    fn arb_spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| {
            let a = DMatrix::from_vec(d, d, v);
            &a * a.transpose() + DMatrix::identity(d, d) * 0.5
        })
    }

    proptest! {
        #[test]
        fn spherical_round_trip(
            m in proptest::collection::vec(-3.0f64..3.0, 2),
            v in 0.1f64..5.0,
            tau in -0.5f64..3.0,
            h in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let q = SphericalGaussian::new(DVector::from_vec(m), v).unwrap();
            let site = NaturalSpherical { precision: tau, shift: h, log_scale: 0.3 };
            let mut tally = OpTally::new();
            if let Cavity::Proper(cav) = divide_out_spherical(&q, &site, &mut tally) {
                let (back, _) = combine_spherical(&[NaturalSpherical::from_gaussian(&cav), site], 2).unwrap();
                prop_assert!((back.variance - q.variance).abs() <= 1e-12 * q.variance);
                prop_assert!((&back.mean - &q.mean).amax() <= 1e-12 * q.mean.amax().max(1.0));
            }
        }

        #[test]
        fn rank_one_round_trip(
            cov in arb_spd(3),
            m in proptest::collection::vec(-3.0f64..3.0, 3),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            tau in 0.0f64..2.0,
            h in -2.0f64..2.0,
        ) {
            prop_assume!(x.iter().any(|v| v.abs() > 0.1));
            let q = FullGaussian::new(DVector::from_vec(m), cov).unwrap();
            let site = RankOneSite { direction: x, precision: tau, shift: h, log_scale: 0.0 };
            let mut tally = OpTally::new();
            if let Cavity::Proper(cav) = divide_out_rank_one(&q, &site, &mut tally) {
                let back = include_rank_one(&cav, &site, &mut tally).unwrap();
                let scale = q.covariance.amax();
                prop_assert!((&back.covariance - &q.covariance).amax() <= 1e-12 * scale);
                prop_assert!((&back.mean - &q.mean).amax() <= 1e-12 * q.mean.amax().max(1.0));
            }
        }
    }
}
