//! Estimating the mean of a Gaussian observed through clutter.
//!
//! Each observation is drawn from `(1-w) N(y; x, I) + w N(y; 0, c·I)` with a
//! known clutter ratio `w`; the prior is `N(0, v₀ I)`. The approximating family
//! is the spherical Gaussian `N(m, v I)`.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::{ModelBinding, Projection};
use crate::gaussian::special::{log_add_exp, log_normal_pdf_spherical, LN_2PI};
use crate::gaussian::{divide_out_spherical, include_spherical, Cavity, NaturalSpherical, OpTally, SphericalGaussian};
use crate::oracles::clutter_tilted_quadrature;
use crate::{Error, Result};

pub const DEFAULT_PRIOR_VARIANCE: f64 = 100.0;
pub const DEFAULT_CLUTTER_VARIANCE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClutterModel {
    pub data: Vec<DVector<f64>>,
    pub w: f64,
    pub prior_variance: f64,
    pub clutter_variance: f64,
    pub dim: usize,
}

impl ClutterModel {
    pub fn new(data: Vec<DVector<f64>>, w: f64, dim: usize) -> Result<Self> {
        Self::with_variances(data, w, dim, DEFAULT_PRIOR_VARIANCE, DEFAULT_CLUTTER_VARIANCE)
    }

    pub fn with_variances(
        data: Vec<DVector<f64>>,
        w: f64,
        dim: usize,
        prior_variance: f64,
        clutter_variance: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidModel(format!("clutter ratio must lie in [0, 1], got {w}")));
        }
        if !(prior_variance > 0.0 && clutter_variance > 0.0) {
            return Err(Error::InvalidModel("prior and clutter variances must be positive".into()));
        }
        if let Some(bad) = data.iter().find(|y| y.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Ok(Self { data, w, prior_variance, clutter_variance, dim })
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn prior_gaussian(&self) -> SphericalGaussian {
        SphericalGaussian { mean: DVector::zeros(self.dim), variance: self.prior_variance }
    }

    /// The prior as the site `t̃₀` with `s₀ = (2π v₀)^{-d/2}`.
    pub fn prior_site(&self) -> NaturalSpherical {
        NaturalSpherical::from_gaussian(&self.prior_gaussian())
    }

    /// `ln p(y | x)` for a single observation.
    pub fn log_likelihood_term(&self, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let inlier = (1.0 - self.w).ln() + log_normal_pdf_spherical(y, x, 1.0);
        let clutter = self.w.ln() + log_normal_pdf_spherical(y, &DVector::zeros(self.dim), self.clutter_variance);
        log_add_exp(inlier, clutter)
    }

    /// `ln ∏_i p(y_i | x)`.
    pub fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        self.data.iter().map(|y| self.log_likelihood_term(y, x)).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record((1..=self.dim).map(|k| format!("y{k}")))?;
        for y in &self.data {
            out.write_record(y.iter().map(|v| format!("{v:?}")))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads observations written by [`write_csv`](Self::write_csv); `w` and
    /// the variances come from the caller.
    pub fn read_csv<R: Read>(reader: R, w: f64, prior_variance: f64, clutter_variance: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let dim = headers.len();
        for (k, h) in headers.iter().enumerate() {
            if h.trim() != format!("y{}", k + 1) {
                return Err(Error::InvalidModel(format!("unexpected column header {h:?}")));
            }
        }
        let mut data = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row: std::result::Result<Vec<f64>, _> = record.iter().map(|s| s.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::InvalidModel(format!("bad observation: {e}")))?;
            data.push(DVector::from_vec(row));
        }
        Self::with_variances(data, w, dim, prior_variance, clutter_variance)
    }
}

/// Recipe for a synthetic clutter dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterDataSpec {
    pub x_true: Vec<f64>,
    pub n: usize,
    pub w: f64,
    pub d: usize,
    pub seed: u64,
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    #[serde(default = "default_clutter_variance")]
    pub clutter_variance: f64,
}

fn default_prior_variance() -> f64 {
    DEFAULT_PRIOR_VARIANCE
}

fn default_clutter_variance() -> f64 {
    DEFAULT_CLUTTER_VARIANCE
}

impl ClutterDataSpec {
    pub fn new(x_true: Vec<f64>, n: usize, w: f64, seed: u64) -> Self {
        let d = x_true.len();
        Self {
            x_true,
            n,
            w,
            d,
            seed,
            prior_variance: DEFAULT_PRIOR_VARIANCE,
            clutter_variance: DEFAULT_CLUTTER_VARIANCE,
        }
    }

    pub fn write_metadata<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// Draws `n` observations from the clutter mixture, deterministically in `seed`.
pub fn generate_clutter_data(spec: &ClutterDataSpec) -> Result<ClutterModel> {
    if spec.x_true.len() != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, got: spec.x_true.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x_true = DVector::from_column_slice(&spec.x_true);
    let clutter_sd = spec.clutter_variance.sqrt();
    let data = (0..spec.n)
        .map(|_| {
            let is_clutter = rng.random::<f64>() < spec.w;
            let noise = DVector::from_fn(spec.d, |_, _| rng.sample::<f64, _>(StandardNormal));
            if is_clutter {
                noise * clutter_sd
            } else {
                &x_true + noise
            }
        })
        .collect();
    ClutterModel::with_variances(data, spec.w, spec.d, spec.prior_variance, spec.clutter_variance)
}

/// Output of the clutter ADF step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterProjection {
    pub posterior: SphericalGaussian,
    pub log_z: f64,
    /// Posterior probability that the observation is not clutter.
    pub r: f64,
}

/// Moment-matches `[(1-w) N(y; x, I) + w N(y; 0, c I)] · N(x; m\, v\ I)`.
///
/// ```text
/// Z = (1-w) N(y; m\, (v\+1) I) + w N(y; 0, c I)
/// r = 1 - w N(y; 0, c I) / Z
/// m = m\ + v\ r (y - m\)/(v\+1)
/// v = v\ - r v\²/(v\+1) + r(1-r) v\² ‖y - m\‖² / (d (v\+1)²)
/// ```
pub fn clutter_moment_match(
    cavity: &SphericalGaussian,
    y: &DVector<f64>,
    w: f64,
    clutter_variance: f64,
    tally: &mut OpTally,
) -> Result<ClutterProjection> {
    let d = cavity.dim();
    if y.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: y.len() });
    }
    let v = cavity.variance;
    let diff = y - &cavity.mean;
    let dist2 = diff.norm_squared();
    tally.vector(2 * d);
    let dd = d as f64;
    let log_inlier = (1.0 - w).ln() - 0.5 * dd * (LN_2PI + (v + 1.0).ln()) - 0.5 * dist2 / (v + 1.0);
    let log_clutter = w.ln() - 0.5 * dd * (LN_2PI + clutter_variance.ln()) - 0.5 * y.norm_squared() / clutter_variance;
    tally.vector(d);
    let log_z = log_add_exp(log_inlier, log_clutter);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::ZeroNormalizer { index: 0 });
    }
    let r = (log_inlier - log_z).exp();
    let not_r = (log_clutter - log_z).exp();
    let gain = v * r / (v + 1.0);
    let mean = &cavity.mean + &diff * gain;
    tally.vector(d);
    let variance = v - r * v * v / (v + 1.0) + r * not_r * v * v * dist2 / (dd * (v + 1.0) * (v + 1.0));
    tally.charge(8);
    Ok(ClutterProjection { posterior: SphericalGaussian { mean, variance }, log_z, r })
}

/// The site `t̃_i = Z_i q / q\i` for a spherical projection:
/// `τ_i = 1/v - 1/v\`, `h_i = τ_i m\ + (m - m\)/v`, and
/// `ln s_i = ln Z_i + (d/2) ln(v\/v) + ‖m - m\‖² / (2 τ_i v v\)`.
pub fn spherical_site_from_update(
    cavity: &SphericalGaussian,
    posterior: &SphericalGaussian,
    log_z: f64,
    tally: &mut OpTally,
) -> NaturalSpherical {
    let d = cavity.dim();
    let (vc, vn) = (cavity.variance, posterior.variance);
    let precision = 1.0 / vn - 1.0 / vc;
    let delta = &posterior.mean - &cavity.mean;
    let shift = &cavity.mean * precision + &delta / vn;
    let dist2 = delta.norm_squared();
    tally.vector(3 * d);
    tally.charge(6);
    let quad = if precision == 0.0 { 0.0 } else { dist2 / (2.0 * precision * vn * vc) };
    NaturalSpherical {
        precision,
        shift: shift.iter().copied().collect(),
        log_scale: log_z + 0.5 * d as f64 * (vc / vn).ln() + quad,
    }
}

/// EP evidence from the sites (prior site first or anywhere in the list):
/// `ln p(D) ≈ (d/2) ln(2π v) + B/2 + Σ ln s_i`, `B = mᵀm/v - Σ_i m_iᵀm_i/v_i`.
pub fn clutter_ep_evidence(sites: &[NaturalSpherical], posterior: &SphericalGaussian) -> f64 {
    let d = posterior.dim() as f64;
    let v = posterior.variance;
    let mut b = posterior.mean.norm_squared() / v;
    let mut log_s = 0.0;
    for site in sites {
        if site.precision != 0.0 {
            let hh: f64 = site.shift.iter().map(|h| h * h).sum();
            b -= hh / site.precision;
        }
        log_s += site.log_scale;
    }
    0.5 * d * (LN_2PI + v.ln()) + 0.5 * b + log_s
}

impl ModelBinding for ClutterModel {
    type Posterior = SphericalGaussian;
    type Site = NaturalSpherical;

    fn site_count(&self) -> usize {
        self.data.len()
    }

    fn prior(&self) -> SphericalGaussian {
        self.prior_gaussian()
    }

    fn vacuous_site(&self, _index: usize) -> NaturalSpherical {
        NaturalSpherical::vacuous(self.dim)
    }

    fn divide_out(&self, posterior: &SphericalGaussian, site: &NaturalSpherical, tally: &mut OpTally) -> Cavity<SphericalGaussian> {
        divide_out_spherical(posterior, site, tally)
    }

    fn include(&self, cavity: &SphericalGaussian, site: &NaturalSpherical, tally: &mut OpTally) -> Result<SphericalGaussian> {
        include_spherical(cavity, site, tally)
    }

    fn moment_match(&self, cavity: &SphericalGaussian, index: usize, tally: &mut OpTally) -> Result<Projection<SphericalGaussian>> {
        let p = clutter_moment_match(cavity, &self.data[index], self.w, self.clutter_variance, tally).map_err(|e| match e {
            Error::ZeroNormalizer { .. } => Error::ZeroNormalizer { index },
            other => other,
        })?;
        Ok(Projection { posterior: p.posterior, log_z: p.log_z })
    }

    fn site_update(
        &self,
        cavity: &SphericalGaussian,
        projection: &Projection<SphericalGaussian>,
        _index: usize,
        tally: &mut OpTally,
    ) -> NaturalSpherical {
        spherical_site_from_update(cavity, &projection.posterior, projection.log_z, tally)
    }

    fn log_evidence(&self, posterior: &SphericalGaussian, sites: &[NaturalSpherical]) -> Result<f64> {
        let mut all = Vec::with_capacity(sites.len() + 1);
        all.push(self.prior_site());
        all.extend_from_slice(sites);
        Ok(clutter_ep_evidence(&all, posterior))
    }

    /// `f = (x, xᵀx)`.
    fn expected_statistics(&self, q: &SphericalGaussian) -> Vec<f64> {
        let mut stats: Vec<f64> = q.mean.iter().copied().collect();
        stats.push(q.second_moment());
        stats
    }

    fn natural_parameters(&self, q: &SphericalGaussian) -> Result<Vec<f64>> {
        let mut eta: Vec<f64> = q.shift().iter().copied().collect();
        eta.push(-0.5 * q.precision());
        Ok(eta)
    }

    fn site_natural_parameters(&self, site: &NaturalSpherical) -> Vec<f64> {
        let mut eta = site.shift.clone();
        eta.push(-0.5 * site.precision);
        eta
    }

    fn log_partition(&self, q: &SphericalGaussian) -> Result<f64> {
        Ok(q.log_partition())
    }

    fn quadrature_moment_match(&self, cavity: &SphericalGaussian, index: usize) -> Option<Result<Projection<SphericalGaussian>>> {
        Some(
            clutter_tilted_quadrature(cavity, &self.data[index], self.w, self.clutter_variance)
                .map(|(posterior, z)| Projection { posterior, log_z: z.ln() }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_adf, run_ep, EpOptions};
    use crate::gaussian::combine_spherical;
    use approx::assert_relative_eq;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn conjugate_moment_match() {
        let cavity = SphericalGaussian::new(v1(0.0), 100.0).unwrap();
        let p = clutter_moment_match(&cavity, &v1(1.0), 0.0, 10.0, &mut OpTally::new()).unwrap();
        assert_eq!(p.r, 1.0);
        assert_relative_eq!(p.posterior.mean[0], 100.0 / 101.0, max_relative = 1e-14);
        assert_relative_eq!(p.posterior.variance, 100.0 / 101.0, max_relative = 1e-14);
        let z = (-0.5 / 101.0f64).exp() / (2.0 * std::f64::consts::PI * 101.0).sqrt();
        assert_relative_eq!(p.log_z.exp(), z, max_relative = 1e-14);
    }

    #[test]
    fn all_clutter_leaves_cavity_unchanged() {
        let cavity = SphericalGaussian::new(DVector::from_vec(vec![0.4, -1.0]), 2.5).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let p = clutter_moment_match(&cavity, &y, 1.0, 10.0, &mut OpTally::new()).unwrap();
        assert_eq!(p.r, 0.0);
        assert_eq!(p.posterior, cavity);
        assert_relative_eq!(p.log_z, log_normal_pdf_spherical(&y, &DVector::zeros(2), 10.0), max_relative = 1e-14);
    }

    #[test]
    fn half_clutter_matches_quadrature() {
        let cavity = SphericalGaussian::new(v1(0.0), 1.0).unwrap();
        let p = clutter_moment_match(&cavity, &v1(2.0), 0.5, 10.0, &mut OpTally::new()).unwrap();
        let (q, z) = clutter_tilted_quadrature(&cavity, &v1(2.0), 0.5, 10.0).unwrap();
        assert_relative_eq!(p.log_z.exp(), z, max_relative = 1e-8);
        assert_relative_eq!(p.posterior.mean[0], q.mean[0], max_relative = 1e-8);
        assert_relative_eq!(p.posterior.variance, q.variance, max_relative = 1e-8);
    }

    #[test]
    fn r_is_one_only_without_clutter() {
        let cavity = SphericalGaussian::new(v1(0.3), 4.0).unwrap();
        for w in [1e-6, 0.2, 0.5, 0.9, 1.0 - 1e-9] {
            let p = clutter_moment_match(&cavity, &v1(-1.0), w, 10.0, &mut OpTally::new()).unwrap();
            assert!(p.r > 0.0 && p.r < 1.0, "w={w} r={}", p.r);
        }
    }

    #[test]
    fn adf_single_observation_is_conjugate() {
        let model = ClutterModel::new(vec![v1(1.0)], 0.0, 1).unwrap();
        let res = run_adf(&model, &[0]).unwrap();
        assert_relative_eq!(res.posterior.mean[0], 100.0 / 101.0, max_relative = 1e-14);
        assert_relative_eq!(res.posterior.variance, 100.0 / 101.0, max_relative = 1e-14);
    }

    #[test]
    fn adf_depends_on_order() {
        let model = ClutterModel::new(vec![v1(3.0), v1(-2.0)], 0.5, 1).unwrap();
        let a = run_adf(&model, &[0, 1]).unwrap();
        let b = run_adf(&model, &[1, 0]).unwrap();
        assert!((a.posterior.variance - b.posterior.variance).abs() > 1e-6);
    }

    #[test]
    fn evidence_of_prior_alone_is_zero() {
        let model = ClutterModel::new(vec![], 0.5, 2).unwrap();
        let ev = clutter_ep_evidence(&[model.prior_site()], &model.prior_gaussian());
        assert!(ev.abs() < 1e-14);
        let res = run_ep(&model, &EpOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.log_evidence.abs() < 1e-14);
    }

    #[test]
    fn step_four_evidence_matches_site_product_normalizer() {
        let spec = ClutterDataSpec::new(vec![2.0, -1.0], 10, 0.5, 3);
        let model = generate_clutter_data(&spec).unwrap();
        let res = run_ep(&model, &EpOptions { tolerance: 1e-10, ..Default::default() }).unwrap();
        let mut all = vec![model.prior_site()];
        all.extend(res.sites.iter().cloned());
        let (_, log_norm) = combine_spherical(&all, 2).unwrap();
        assert_relative_eq!(res.log_evidence, log_norm, max_relative = 1e-10);
    }

    #[test]
    fn data_generation_is_deterministic() {
        let spec = ClutterDataSpec::new(vec![2.0], 20, 0.5, 42);
        assert_eq!(generate_clutter_data(&spec).unwrap(), generate_clutter_data(&spec).unwrap());
        let other = ClutterDataSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate_clutter_data(&spec).unwrap(), generate_clutter_data(&other).unwrap());
    }

    #[test]
    fn no_clutter_draws_center_on_truth() {
        let spec = ClutterDataSpec::new(vec![2.0], 4000, 0.0, 1);
        let model = generate_clutter_data(&spec).unwrap();
        let mean = model.data.iter().map(|y| y[0]).sum::<f64>() / 4000.0;
        let var = model.data.iter().map(|y| (y[0] - mean).powi(2)).sum::<f64>() / 3999.0;
        assert!((mean - 2.0).abs() < 0.06, "mean={mean}");
        assert!((var - 1.0).abs() < 0.08, "var={var}");
    }

    #[test]
    fn csv_round_trip() {
        let spec = ClutterDataSpec::new(vec![1.0, 2.0, 3.0], 5, 0.3, 7);
        let model = generate_clutter_data(&spec).unwrap();
        let mut buf = Vec::new();
        model.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("y1,y2,y3\n"));
        let back = ClutterModel::read_csv(buf.as_slice(), 0.3, 100.0, 10.0).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ClutterModel::new(vec![v1(0.0)], 1.5, 1).is_err());
        assert!(ClutterModel::new(vec![DVector::zeros(2)], 0.5, 1).is_err());
        assert!(ClutterModel::read_csv("a,b\n1,2\n".as_bytes(), 0.5, 100.0, 10.0).is_err());
    }
}
