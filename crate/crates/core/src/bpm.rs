//! Linear Bayes point machine trained by EP.
//!
//! The weight prior is `N(0, I)` and each labelled point contributes the
//! probit term `Φ(y_i wᵀx_i / ε)`. Writing `u_i = y_i x_i` and using the
//! noise variance `ε²`, every term is `Φ(u_iᵀw / ε)` and its site is a
//! rank-one Gaussian along `u_i`. `ε = 0` gives the step function
//! `[u_iᵀw > 0]`, evaluated as the `ε² → 0` limit of the probit formulas.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{run_ep_observed, EpOptions, ModelBinding, Projection, SweepSnapshot};
use crate::gaussian::special::{log_probit, probit_ratio};
use crate::gaussian::{
    divide_out_rank_one, include_rank_one, rank_one_update, symmetrize, Cavity, FullGaussian, OpTally, RankOneSite,
};
use crate::oracles::bpm_tilted_quadrature;
use crate::{Error, Result};

/// Labelled points for a linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BpmDataset {
    /// Feature vectors, including the trailing constant when `bias_augmented`.
    pub points: Vec<DVector<f64>>,
    pub labels: Vec<i8>,
    /// Probit slack `ε ≥ 0`.
    pub slack: f64,
    pub bias_augmented: bool,
}

impl BpmDataset {
    /// `features` are the raw points; with `bias` a constant 1 is appended to
    /// each so the separating hyperplane need not pass through the origin.
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<i8>, slack: f64, bias: bool) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::InvalidModel(format!("{} points but {} labels", features.len(), labels.len())));
        }
        if labels.iter().any(|&y| y != 1 && y != -1) {
            return Err(Error::InvalidModel("labels must be -1 or +1".into()));
        }
        if !(slack >= 0.0) || !slack.is_finite() {
            return Err(Error::InvalidModel(format!("slack must be non-negative, got {slack}")));
        }
        let d = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::InvalidModel("points have differing dimensions".into()));
        }
        let points = features
            .into_iter()
            .map(|mut f| {
                if bias {
                    f.push(1.0);
                }
                DVector::from_vec(f)
            })
            .collect();
        Ok(Self { points, labels, slack, bias_augmented: bias })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weight dimension; `None` for an empty dataset, whose dimension comes
    /// from the caller.
    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.len())
    }

    /// Label-applied directions `u_i = y_i x_i`.
    pub fn directions(&self) -> Vec<DVector<f64>> {
        self.points.iter().zip(&self.labels).map(|(x, &y)| x * f64::from(y)).collect()
    }

    /// Reads feature columns followed by a `label` column.
    pub fn read_csv<R: Read>(reader: R, slack: f64, bias: bool) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().last().map(str::trim) != Some("label") {
            return Err(Error::InvalidModel("last column must be \"label\"".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let values: std::result::Result<Vec<f64>, _> = record.iter().map(|s| s.trim().parse::<f64>()).collect();
            let mut values = values.map_err(|e| Error::InvalidModel(format!("bad dataset entry: {e}")))?;
            let label = values.pop().unwrap_or(0.0);
            labels.push(if label == 1.0 { 1 } else if label == -1.0 { -1 } else { 0 });
            features.push(values);
        }
        Self::new(features, labels, slack, bias)
    }

    /// Writes the raw features (without the bias column) and labels.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let d = self.dim().unwrap_or(0) - usize::from(self.bias_augmented && !self.is_empty());
        let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        header.push("label".into());
        out.write_record(&header)?;
        for (x, y) in self.points.iter().zip(&self.labels) {
            let mut row: Vec<String> = x.iter().take(d).map(|v| format!("{v:?}")).collect();
            row.push(y.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Three separable points in the plane with a bias column: two positives
/// above the diagonal and one negative below, noise-free labels (`ε = 0`).
pub fn three_point_dataset() -> BpmDataset {
    BpmDataset::new(vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![-1.0, -1.0]], vec![1, 1, -1], 0.0, true)
        .expect("built-in dataset is valid")
}

/// The EP problem: directions `u_i` and the noise variance `ε²`.
#[derive(Debug, Clone, PartialEq)]
pub struct BpmProblem {
    pub directions: Vec<DVector<f64>>,
    pub noise_variance: f64,
    pub dim: usize,
}

impl BpmProblem {
    pub fn new(dataset: &BpmDataset, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("weight dimension must be at least 1".into()));
        }
        if let Some(d) = dataset.dim() {
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: d });
            }
        }
        let directions = dataset.directions();
        if directions.iter().any(|u| u.iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidModel("zero feature vector".into()));
        }
        Ok(Self { directions, noise_variance: dataset.slack * dataset.slack, dim })
    }

    /// `ln p(D | w) = Σ ln Φ(u_iᵀw / ε)`.
    pub fn log_likelihood(&self, w: &DVector<f64>) -> f64 {
        self.directions
            .iter()
            .map(|u| {
                let a = u.dot(w);
                if self.noise_variance == 0.0 {
                    if a > 0.0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    log_probit(a / self.noise_variance.sqrt())
                }
            })
            .sum()
    }
}

/// Scalars of the probit tilt along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbitTilt {
    /// `μ / √(s² + ε²)` with `μ = uᵀm\`, `s² = uᵀV\u`.
    pub z: f64,
    pub log_z: f64,
    /// `d ln Z / dμ`.
    pub alpha: f64,
    /// `-d² ln Z / dμ² = α (α + μ/(s² + ε²))`.
    pub beta: f64,
}

fn probit_tilt(mu: f64, s2: f64, noise_variance: f64) -> Result<ProbitTilt> {
    let c2 = s2 + noise_variance;
    if !(c2 > 0.0) {
        return Err(Error::DegenerateCovariance);
    }
    let c = c2.sqrt();
    let z = mu / c;
    let alpha = probit_ratio(z) / c;
    let beta = alpha * (alpha + mu / c2);
    Ok(ProbitTilt { z, log_z: log_probit(z), alpha, beta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpmProjection {
    pub posterior: FullGaussian,
    pub log_z: f64,
    pub z: f64,
    pub alpha: f64,
}

/// `q\i ∝ q / t̃_i`; see [`divide_out_rank_one`].
pub fn bpm_cavity(posterior: &FullGaussian, site: &RankOneSite, tally: &mut OpTally) -> Cavity<FullGaussian> {
    divide_out_rank_one(posterior, site, tally)
}

/// Moment-matches `Φ(uᵀw/ε) · N(w; m\, V\)`:
/// `m = m\ + α V\u`, `V = V\ - β (V\u)(V\u)ᵀ`.
pub fn bpm_moment_match(cavity: &FullGaussian, u: &DVector<f64>, noise_variance: f64, tally: &mut OpTally) -> Result<BpmProjection> {
    let d = cavity.dim();
    if u.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: u.len() });
    }
    let vu = &cavity.covariance * u;
    tally.matrix(d);
    let s2 = u.dot(&vu);
    let mu = u.dot(&cavity.mean);
    tally.vector(2 * d);
    let t = probit_tilt(mu, s2, noise_variance)?;
    if t.log_z == f64::NEG_INFINITY {
        return Err(Error::ZeroNormalizer { index: 0 });
    }
    let mut mean = cavity.mean.clone();
    mean.axpy(t.alpha, &vu, 1.0);
    tally.vector(d);
    let mut covariance = cavity.covariance.clone();
    rank_one_update(&mut covariance, -t.beta, &vu);
    symmetrize(&mut covariance);
    tally.matrix(d);
    tally.matrix(d);
    Ok(BpmProjection { posterior: FullGaussian { mean, covariance }, log_z: t.log_z, z: t.z, alpha: t.alpha })
}

/// The site `t̃ = Z q / q\` along `u`, from the cavity.
///
/// With `s²`, `μ` the cavity's projected variance and mean:
/// `τ = β/(1 - βs²)`, `h = (α + βμ)/(1 - βs²)` and
/// `ln s = ln Z - ½ ln(1 - βs²) + α²/(2β)`.
pub fn bpm_site(cavity: &FullGaussian, u: &DVector<f64>, noise_variance: f64, tally: &mut OpTally) -> Result<RankOneSite> {
    let d = cavity.dim();
    let vu = &cavity.covariance * u;
    tally.matrix(d);
    let s2 = u.dot(&vu);
    let mu = u.dot(&cavity.mean);
    tally.vector(2 * d);
    let t = probit_tilt(mu, s2, noise_variance)?;
    let direction = u.iter().copied().collect();
    if t.beta == 0.0 {
        return Ok(RankOneSite { direction, precision: 0.0, shift: 0.0, log_scale: t.log_z });
    }
    let shrink = 1.0 - t.beta * s2;
    Ok(RankOneSite {
        direction,
        precision: t.beta / shrink,
        shift: (t.alpha + t.beta * mu) / shrink,
        log_scale: t.log_z - 0.5 * shrink.ln() + 0.5 * t.alpha * t.alpha / t.beta,
    })
}

/// `ln p(D) ≈ ½ ln|V| + B/2 + Σ ln s_i` with `B = mᵀV⁻¹m - Σ_{τ_i≠0} h_i²/τ_i`.
pub fn bpm_evidence_from_sites(posterior: &FullGaussian, sites: &[RankOneSite]) -> Result<f64> {
    let chol = posterior.covariance.clone().cholesky().ok_or(Error::DegenerateCovariance)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let mut b = posterior.mean.dot(&chol.solve(&posterior.mean));
    let mut log_s = 0.0;
    for site in sites {
        if site.precision != 0.0 {
            b -= site.shift * site.shift / site.precision;
        }
        log_s += site.log_scale;
    }
    Ok(0.5 * log_det + 0.5 * b + log_s)
}

impl ModelBinding for BpmProblem {
    type Posterior = FullGaussian;
    type Site = RankOneSite;

    fn site_count(&self) -> usize {
        self.directions.len()
    }

    fn prior(&self) -> FullGaussian {
        FullGaussian::standard(self.dim)
    }

    fn vacuous_site(&self, index: usize) -> RankOneSite {
        RankOneSite::vacuous(self.directions[index].clone()).expect("directions are checked non-zero")
    }

    fn divide_out(&self, posterior: &FullGaussian, site: &RankOneSite, tally: &mut OpTally) -> Cavity<FullGaussian> {
        bpm_cavity(posterior, site, tally)
    }

    fn include(&self, cavity: &FullGaussian, site: &RankOneSite, tally: &mut OpTally) -> Result<FullGaussian> {
        include_rank_one(cavity, site, tally)
    }

    fn moment_match(&self, cavity: &FullGaussian, index: usize, tally: &mut OpTally) -> Result<Projection<FullGaussian>> {
        let p = bpm_moment_match(cavity, &self.directions[index], self.noise_variance, tally).map_err(|e| match e {
            Error::ZeroNormalizer { .. } => Error::ZeroNormalizer { index },
            other => other,
        })?;
        Ok(Projection { posterior: p.posterior, log_z: p.log_z })
    }

    fn site_update(&self, cavity: &FullGaussian, _projection: &Projection<FullGaussian>, index: usize, tally: &mut OpTally) -> RankOneSite {
        bpm_site(cavity, &self.directions[index], self.noise_variance, tally).expect("cavity already moment-matched")
    }

    fn log_evidence(&self, posterior: &FullGaussian, sites: &[RankOneSite]) -> Result<f64> {
        bpm_evidence_from_sites(posterior, sites)
    }

    /// `f = (w, upper triangle of wwᵀ)`.
    fn expected_statistics(&self, q: &FullGaussian) -> Vec<f64> {
        let mut stats: Vec<f64> = q.mean.iter().copied().collect();
        for j in 0..self.dim {
            for k in j..self.dim {
                stats.push(q.covariance[(j, k)] + q.mean[j] * q.mean[k]);
            }
        }
        stats
    }

    fn natural_parameters(&self, q: &FullGaussian) -> Result<Vec<f64>> {
        let precision = q.precision()?;
        let shift = &precision * &q.mean;
        Ok(pack_natural(&shift, &precision))
    }

    fn site_natural_parameters(&self, site: &RankOneSite) -> Vec<f64> {
        let u = site.direction_vector();
        let precision = &u * u.transpose() * site.precision;
        pack_natural(&(u * site.shift), &precision)
    }

    fn log_partition(&self, q: &FullGaussian) -> Result<f64> {
        q.log_partition()
    }

    fn quadrature_moment_match(&self, cavity: &FullGaussian, index: usize) -> Option<Result<Projection<FullGaussian>>> {
        Some(
            bpm_tilted_quadrature(cavity, &self.directions[index], self.noise_variance)
                .map(|(posterior, z)| Projection { posterior, log_z: z.ln() }),
        )
    }
}

/// Coefficients of `(w, wwᵀ upper triangle)` in `hᵀw - ½ wᵀΛw`.
fn pack_natural(shift: &DVector<f64>, precision: &DMatrix<f64>) -> Vec<f64> {
    let d = shift.len();
    let mut eta: Vec<f64> = shift.iter().copied().collect();
    for j in 0..d {
        for k in j..d {
            eta.push(if j == k { -0.5 * precision[(j, j)] } else { -precision[(j, k)] });
        }
    }
    eta
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingDiagnostics {
    pub sweeps: usize,
    pub converged: bool,
    pub skipped_sites: usize,
    pub tally: OpTally,
}

/// A trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BpmModel {
    pub posterior: FullGaussian,
    pub sites: Vec<RankOneSite>,
    pub log_evidence: f64,
    pub diagnostics: TrainingDiagnostics,
    pub bias_augmented: bool,
}

/// Trains with EP from the prior `N(0, I)` and vacuous sites. `dim` is used
/// only when the dataset is empty.
pub fn bpm_train(dataset: &BpmDataset, dim: usize, opts: &EpOptions) -> Result<BpmModel> {
    bpm_train_observed(dataset, dim, opts, |_| {})
}

pub fn bpm_train_observed<F>(dataset: &BpmDataset, dim: usize, opts: &EpOptions, observer: F) -> Result<BpmModel>
where
    F: FnMut(&SweepSnapshot<'_, FullGaussian, RankOneSite>),
{
    let problem = BpmProblem::new(dataset, dataset.dim().unwrap_or(dim))?;
    let result = run_ep_observed(&problem, opts, observer)?;
    Ok(BpmModel {
        posterior: result.posterior,
        sites: result.sites,
        log_evidence: result.log_evidence,
        diagnostics: TrainingDiagnostics {
            sweeps: result.sweeps,
            converged: result.converged,
            skipped_sites: result.diagnostics.skipped_sites,
            tally: result.diagnostics.tally,
        },
        bias_augmented: dataset.bias_augmented,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub label: i8,
    /// `E[w]ᵀx` was exactly zero and the label defaulted to +1.
    pub tie: bool,
}

/// `sign(E[w]ᵀx)`, with +1 on a tie. `x` must already carry the bias
/// coordinate if the model was trained with one.
pub fn bpm_predict(model: &BpmModel, x: &DVector<f64>) -> Result<Prediction> {
    let d = model.posterior.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let score = model.posterior.mean.dot(x);
    Ok(Prediction { label: if score < 0.0 { -1 } else { 1 }, tie: score == 0.0 })
}

/// Fraction of misclassified points and the number of ties.
pub fn error_rate(model: &BpmModel, dataset: &BpmDataset) -> Result<(f64, usize)> {
    if dataset.is_empty() {
        return Ok((0.0, 0));
    }
    let mut wrong = 0;
    let mut ties = 0;
    for (x, &y) in dataset.points.iter().zip(&dataset.labels) {
        let p = bpm_predict(model, x)?;
        wrong += usize::from(p.label != y);
        ties += usize::from(p.tie);
    }
    Ok((wrong as f64 / dataset.len() as f64, ties))
}

pub fn bpm_evidence(model: &BpmModel) -> f64 {
    model.log_evidence
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteExport {
    /// `None` for a zero-precision site.
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub log_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelExport {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major.
    pub covariance: Vec<f64>,
    pub sites: Vec<SiteExport>,
    pub log_evidence: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub skipped_sites: usize,
    pub bias_augmented: bool,
}

impl BpmModel {
    pub fn export(&self) -> ModelExport {
        let d = self.posterior.dim();
        ModelExport {
            dim: d,
            mean: self.posterior.mean.iter().copied().collect(),
            covariance: (0..d * d).map(|i| self.posterior.covariance[(i / d, i % d)]).collect(),
            sites: self
                .sites
                .iter()
                .map(|s| SiteExport {
                    mean: s.mean(),
                    variance: (s.precision != 0.0).then(|| s.variance()),
                    log_scale: s.log_scale,
                })
                .collect(),
            log_evidence: self.log_evidence,
            sweeps: self.diagnostics.sweeps,
            converged: self.diagnostics.converged,
            skipped_sites: self.diagnostics.skipped_sites,
            bias_augmented: self.bias_augmented,
        }
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.export())?;
        Ok(())
    }
}
