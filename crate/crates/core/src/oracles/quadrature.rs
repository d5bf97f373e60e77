//! Globally adaptive Gauss–Kronrod (7/15) quadrature and tilted moments.

use nalgebra::{DMatrix, DVector};

use crate::gaussian::special::{log_normal_pdf_spherical, probit, std_normal_pdf};
use crate::gaussian::{rank_one_update, symmetrize, FullGaussian, SphericalGaussian};
use crate::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Target relative error of each integral.
    pub rel_tol: f64,
    /// Half-width of the domain in cavity standard deviations.
    pub half_width: f64,
    /// Equal pieces each breakpoint-delimited segment starts with.
    pub initial_pieces: usize,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-12, half_width: 12.0, initial_pieces: 4, max_intervals: 4000 }
    }
}

struct Interval<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    /// `|Kronrod - Gauss|` per component.
    error: [f64; K],
}

fn gk15<const K: usize>(f: &impl Fn(f64) -> [f64; K], a: f64, b: f64) -> Interval<K> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = [0.0; K];
    let mut gauss = [0.0; K];
    for (j, (&x, &wk)) in XGK.iter().zip(&WGK).enumerate() {
        let points: &[f64] = if x == 0.0 { &[0.0] } else { &[x, -x] };
        for &p in points {
            let fx = f(center + half * p);
            for k in 0..K {
                kronrod[k] += wk * fx[k];
                if j % 2 == 1 {
                    gauss[k] += WG[j / 2] * fx[k];
                }
            }
        }
    }
    let mut error = [0.0; K];
    for k in 0..K {
        kronrod[k] *= half;
        gauss[k] *= half;
        error[k] = (kronrod[k] - gauss[k]).abs();
    }
    Interval { a, b, value: kronrod, error }
}

/// Integrates a vector-valued `f` over `[breaks[0], breaks[last]]`, bisecting
/// the interval with the largest scaled error until every component's summed
/// error is below `rel_tol · max(|I_k|, |I_0|)`.
pub fn integrate<const K: usize>(f: impl Fn(f64) -> [f64; K], breaks: &[f64], opts: &QuadratureOptions) -> [f64; K] {
    let pieces = opts.initial_pieces.max(1);
    let mut intervals = Vec::new();
    for seg in breaks.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        if !(hi > lo) {
            continue;
        }
        let step = (hi - lo) / pieces as f64;
        for p in 0..pieces {
            let a = lo + step * p as f64;
            let b = if p + 1 == pieces { hi } else { lo + step * (p + 1) as f64 };
            intervals.push(gk15(&f, a, b));
        }
    }
    loop {
        let mut total = [0.0; K];
        let mut total_err = [0.0; K];
        for iv in &intervals {
            for k in 0..K {
                total[k] += iv.value[k];
                total_err[k] += iv.error[k];
            }
        }
        let scale: [f64; K] = std::array::from_fn(|k| total[k].abs().max(total[0].abs()).max(f64::MIN_POSITIVE));
        let converged = (0..K).all(|k| total_err[k] <= opts.rel_tol * scale[k]);
        if converged || intervals.len() >= opts.max_intervals {
            return total;
        }
        let score = |iv: &Interval<K>| (0..K).map(|k| iv.error[k] / scale[k]).fold(0.0, f64::max);
        let worst = (0..intervals.len())
            .max_by(|&i, &j| score(&intervals[i]).total_cmp(&score(&intervals[j])))
            .expect("non-empty");
        let iv = intervals.swap_remove(worst);
        let mid = 0.5 * (iv.a + iv.b);
        intervals.push(gk15(&f, iv.a, mid));
        intervals.push(gk15(&f, mid, iv.b));
    }
}

/// Normalizer and moments of the tilted density `term(x) · N(x; μ, σ²) / Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments {
    pub z: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Tilted moments by adaptive quadrature over `μ ± 12σ`, widened to cover
/// `features` (points where the term peaks or jumps; they also become
/// breakpoints).
pub fn tilted_moments_quadrature(
    cavity_mean: f64,
    cavity_variance: f64,
    term: impl Fn(f64) -> f64,
    features: &[f64],
) -> Result<TiltedMoments> {
    tilted_moments_quadrature_with(cavity_mean, cavity_variance, term, features, &QuadratureOptions::default())
}

pub fn tilted_moments_quadrature_with(
    cavity_mean: f64,
    cavity_variance: f64,
    term: impl Fn(f64) -> f64,
    features: &[f64],
    opts: &QuadratureOptions,
) -> Result<TiltedMoments> {
    if !(cavity_variance > 0.0) {
        return Err(Error::DegenerateCovariance);
    }
    let sd = cavity_variance.sqrt();
    // Work in the standardized coordinate t = (x - μ)/σ.
    let to_t = |x: f64| (x - cavity_mean) / sd;
    let mut lo = -opts.half_width;
    let mut hi = opts.half_width;
    let mut breaks = Vec::new();
    for &x in features {
        let t = to_t(x);
        if t.is_finite() {
            lo = lo.min(t - 1.0);
            hi = hi.max(t + 1.0);
            breaks.push(t);
        }
    }
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let g = |t: f64| term(cavity_mean + sd * t) * std_normal_pdf(t);
    let [z, first] = integrate(|t| {
        let gt = g(t);
        [gt, t * gt]
    }, &breaks, opts);
    if !(z >= 1e-280) {
        return Err(Error::VanishingMass(z));
    }
    let t_mean = first / z;
    let [central] = integrate(|t| [(t - t_mean).powi(2) * g(t)], &breaks, opts);
    Ok(TiltedMoments { z, mean: cavity_mean + sd * t_mean, variance: cavity_variance * central / z })
}

/// Tilted spherical moments for one clutter observation, by quadrature.
///
/// For `d = 1` the full mixture term is integrated directly. For `d > 1` the
/// inlier component factorizes over coordinates against the spherical cavity,
/// so its moments are products of 1-D quadratures; the clutter component is
/// constant in `x` and leaves the cavity moments unchanged. The two are then
/// combined as a two-component mixture and projected to `N(m, v I)` with
/// `v = tr(Cov)/d`.
pub fn clutter_tilted_quadrature(
    cavity: &SphericalGaussian,
    y: &DVector<f64>,
    w: f64,
    clutter_variance: f64,
) -> Result<(SphericalGaussian, f64)> {
    let d = cavity.dim();
    let v = cavity.variance;
    let clutter_density = log_normal_pdf_spherical(y, &DVector::zeros(d), clutter_variance).exp();
    let inlier_pdf = |yk: f64, x: f64| std_normal_pdf(yk - x);

    if d == 1 {
        let y0 = y[0];
        let term = |x: f64| (1.0 - w) * inlier_pdf(y0, x) + w * clutter_density;
        let t = tilted_moments_quadrature(cavity.mean[0], v, term, &[y0, 0.0])?;
        return Ok((SphericalGaussian { mean: DVector::from_element(1, t.mean), variance: t.variance }, t.z));
    }

    let per_coord: Vec<TiltedMoments> = (0..d)
        .map(|k| tilted_moments_quadrature(cavity.mean[k], v, |x| inlier_pdf(y[k], x), &[y[k]]))
        .collect::<Result<_>>()?;
    let inlier_mass = (1.0 - w) * per_coord.iter().map(|t| t.z).product::<f64>();
    let clutter_mass = w * clutter_density;
    let z = inlier_mass + clutter_mass;
    if !(z >= 1e-280) {
        return Err(Error::VanishingMass(z));
    }
    let (pi_in, pi_out) = (inlier_mass / z, clutter_mass / z);
    let mut mean = DVector::zeros(d);
    let mut trace = 0.0;
    for k in 0..d {
        let mk = pi_in * per_coord[k].mean + pi_out * cavity.mean[k];
        mean[k] = mk;
        trace += pi_in * (per_coord[k].variance + (per_coord[k].mean - mk).powi(2))
            + pi_out * (v + (cavity.mean[k] - mk).powi(2));
    }
    Ok((SphericalGaussian { mean, variance: trace / d as f64 }, z))
}

/// Tilted moments of `φ(wᵀx / ε) · N(w; m, V)` (a step function when
/// `ε = 0`), by 1-D quadrature along `u = wᵀx` and Gaussian conditioning of
/// the remaining directions on `u`.
pub fn bpm_tilted_quadrature(cavity: &FullGaussian, x: &DVector<f64>, noise_variance: f64) -> Result<(FullGaussian, f64)> {
    let vx = &cavity.covariance * x;
    let s2 = x.dot(&vx);
    let mu = x.dot(&cavity.mean);
    let t = if noise_variance == 0.0 {
        tilted_moments_quadrature(mu, s2, |u| if u > 0.0 { 1.0 } else { 0.0 }, &[0.0])?
    } else {
        let eps = noise_variance.sqrt();
        tilted_moments_quadrature(mu, s2, |u| probit(u / eps), &[0.0])?
    };
    let mut mean = cavity.mean.clone();
    mean.axpy((t.mean - mu) / s2, &vx, 1.0);
    let mut covariance: DMatrix<f64> = cavity.covariance.clone();
    rank_one_update(&mut covariance, (t.variance - s2) / (s2 * s2), &vx);
    symmetrize(&mut covariance);
    Ok((FullGaussian { mean, covariance }, t.z))
}
