//! Scalar special functions for the standard normal distribution.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Below this argument `probit_ratio` and `log_probit` switch from the direct
/// quotient to the Mills-ratio continued fraction.
const TAIL_CUTOFF: f64 = -10.0;

/// Density of the standard normal at `z`.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn log_std_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// Standard normal CDF, `φ(z) = ∫_{-∞}^z N(t; 0, 1) dt`.
#[inline]
pub fn probit(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `ln φ(z)` without underflow in the lower tail.
pub fn log_probit(z: f64) -> f64 {
    if z < TAIL_CUTOFF {
        log_std_normal_pdf(z) + mills_ratio(-z).ln()
    } else if z > 0.0 {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else {
        probit(z).ln()
    }
}

/// `N(z; 0, 1) / φ(z)`, the factor that drives probit moment matching.
///
/// The direct quotient is accurate while `φ(z)` is a normal number; for
/// `z < -10` the ratio is evaluated as the reciprocal of the Mills ratio
/// via its continued fraction, which stays finite down to any `z`.
pub fn probit_ratio(z: f64) -> f64 {
    if z < TAIL_CUTOFF {
        1.0 / mills_ratio(-z)
    } else {
        std_normal_pdf(z) / probit(z)
    }
}

/// Mills ratio `R(x) = φ(-x) / N(x; 0, 1)` for `x >= 10`, by Lentz's method on
/// `R(x) = 1/(x + 1/(x + 2/(x + 3/(x + …))))`.
fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= -TAIL_CUTOFF);
    const TINY: f64 = 1e-300;
    // f = b0 + a1/(b1 + a2/(b2 + …)) with b0 = x, a_k = k, b_k = x; R = 1/f.
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Numerically stable `ln(Σ exp(xs))`; returns `-∞` for an empty or all `-∞`
/// input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log density of `N(y; m, v·I)`.
pub fn log_normal_pdf_spherical(y: &DVector<f64>, m: &DVector<f64>, variance: f64) -> f64 {
    let d = y.len() as f64;
    let sq = (y - m).norm_squared();
    -0.5 * d * (LN_2PI + variance.ln()) - 0.5 * sq / variance
}

/// Log density of `N(y; m, V)` via a Cholesky factorization of `V`.
pub fn log_normal_pdf(y: &DVector<f64>, m: &DVector<f64>, covariance: &DMatrix<f64>) -> Result<f64> {
    let d = y.len();
    if m.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: m.len() });
    }
    if covariance.nrows() != d || covariance.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: covariance.nrows() });
    }
    let chol = covariance
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateCovariance)?;
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..d {
        let lii = l[(i, i)];
        if !(lii > 0.0) || !lii.is_finite() {
            return Err(Error::DegenerateCovariance);
        }
        log_det += 2.0 * lii.ln();
    }
    let diff = y - m;
    let solved = chol.l().solve_lower_triangular(&diff).ok_or(Error::DegenerateCovariance)?;
    Ok(-0.5 * (d as f64) * LN_2PI - 0.5 * log_det - 0.5 * solved.norm_squared())
}

/// `N(y; m, V)`.
pub fn normal_pdf(y: &DVector<f64>, m: &DVector<f64>, covariance: &DMatrix<f64>) -> Result<f64> {
    log_normal_pdf(y, m, covariance).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn normal_pdf_closed_forms() {
        let v = DMatrix::identity(1, 1);
        let p = normal_pdf(&DVector::from_element(1, 0.0), &DVector::from_element(1, 0.0), &v).unwrap();
        assert_relative_eq!(p, 0.398_942_280_401_432_7, max_relative = 1e-14);

        let p = normal_pdf(
            &DVector::from_vec(vec![1.0, 0.0]),
            &DVector::zeros(2),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_relative_eq!(p, 0.096_532_352_630_053_91, max_relative = 1e-14);
    }

    #[test]
    fn normal_pdf_at_mean_is_inverse_sqrt_det() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let m = DVector::from_vec(vec![0.7, -1.2]);
        let p = normal_pdf(&m, &m, &v).unwrap();
        let expected = 1.0 / ((2.0 * PI).powi(2) * v.determinant()).sqrt();
        assert_relative_eq!(p, expected, max_relative = 1e-13);
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = normal_pdf(&DVector::zeros(2), &DVector::zeros(2), &v).unwrap_err();
        assert_eq!(err.to_string(), "degenerate covariance");
    }

    #[test]
    fn log_pdf_survives_deep_exponents() {
        // quadratic term of -700 would underflow the linear-domain density
        let y = DVector::from_element(1, (1400.0f64).sqrt());
        let lp = log_normal_pdf(&y, &DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(lp, -700.0 - 0.5 * LN_2PI, max_relative = 1e-14);
    }

    #[test]
    fn probit_reference_values() {
        assert_eq!(probit(0.0), 0.5);
        assert_eq!(probit(38.0), 1.0);
        // 40-digit reference: 0.84134474606854294858...
        assert_relative_eq!(probit(1.0), 0.841_344_746_068_542_9, max_relative = 1e-15);
    }

    #[test]
    fn probit_ratio_reference_values() {
        assert_relative_eq!(probit_ratio(0.0), 0.797_884_560_802_865_4, max_relative = 1e-14);
        // extended-precision references (mpmath, 40 digits)
        let cases = [
            (-40.0, 40.024_968_847_207_26),
            (-30.0, 30.033_259_667_433_68),
            (-10.0, 10.098_093_233_962_51),
            (-5.0, 5.186_503_967_125_842),
            (-300.0, 300.003_333_259_263_4),
            (5.0, 1.486_719_940_904_906e-6),
        ];
        for (z, expected) in cases {
            assert_relative_eq!(probit_ratio(z), expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn probit_ratio_asymptote() {
        for z in [-50.0, -100.0, -1000.0, -1e5] {
            let r = probit_ratio(z) / -z;
            assert!((r - 1.0).abs() < 1.0 / (z * z) + 1e-15, "z={z} r={r}");
        }
    }

    #[test]
    fn probit_ratio_is_monotone_and_finite_down_to_minus_300() {
        let mut prev = f64::INFINITY;
        let mut z = -300.0;
        while z <= 37.0 {
            let r = probit_ratio(z);
            assert!(r.is_finite() && r > 0.0);
            assert!(r <= prev, "not decreasing at {z}");
            prev = r;
            z += 0.01;
        }
    }

    #[test]
    fn probit_ratio_is_continuous_at_the_branch_point() {
        let below = probit_ratio(TAIL_CUTOFF - 1e-12);
        let above = probit_ratio(TAIL_CUTOFF);
        assert_relative_eq!(below, above, max_relative = 1e-11);
        assert_relative_eq!(
            log_probit(TAIL_CUTOFF - 1e-12),
            log_probit(TAIL_CUTOFF),
            max_relative = 1e-11
        );
    }

    #[test]
    fn log_probit_matches_direct_log() {
        for z in [-9.0, -3.0, 0.0, 1.5, 6.0] {
            assert_relative_eq!(log_probit(z), probit(z).ln(), max_relative = 1e-13);
        }
        // φ(-40) underflows nowhere in log space
        assert_relative_eq!(log_probit(-40.0), -804.608_442_013_754, max_relative = 1e-12);
    }

    #[test]
    fn probit_symmetry_many_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let z: f64 = rng.random_range(-10.0..10.0);
            assert!((probit(z) + probit(-z) - 1.0).abs() <= 1e-15, "z={z}");
        }
    }

    #[test]
    fn log_sum_exp_edges() {
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp([1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_relative_eq!(log_add_exp(-1.0, 2.0), (1f64.exp().recip() + 2f64.exp()).ln());
    }

    proptest! {
        #[test]
        fn probit_ratio_matches_naive_quotient(z in -8.0f64..8.0) {
            let naive = std_normal_pdf(z) / probit(z);
            prop_assert!((probit_ratio(z) - naive).abs() <= 1e-10 * naive);
        }

        #[test]
        fn log_pdf_equals_log_of_pdf(
            y in proptest::collection::vec(-5.0f64..5.0, 3),
            m in proptest::collection::vec(-5.0f64..5.0, 3),
            a in 0.2f64..3.0, b in 0.2f64..3.0, c in -0.5f64..0.5,
        ) {
            let cov = DMatrix::from_row_slice(3, 3, &[a, c * 0.3, 0.0, c * 0.3, b, 0.1, 0.0, 0.1, 1.0]);
            let y = DVector::from_vec(y);
            let m = DVector::from_vec(m);
            let lin = normal_pdf(&y, &m, &cov).unwrap();
            prop_assume!(lin > 1e-290);
            let lg = log_normal_pdf(&y, &m, &cov).unwrap();
            prop_assert!((lg - lin.ln()).abs() <= 1e-12 * lg.abs().max(1.0));
        }
    }
}
