//! Fixed-size confidence ellipsoids and the stopping rule built on them.
//!
//! Sampling stops at the first `n >= n0` where the smallest eigenvalue of the
//! observed information reaches `C^2 / d^2`, with `C^2` the upper `alpha`
//! quantile of chi-square(3). At that point the ellipsoid
//! `(g_hat - g)' J (g_hat - g) <= C^2` has maximum half-axis at most `d`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use statrs::function::gamma::gamma_ur;

use crate::error::{CalibError, Result};
use crate::irt_model::{Gamma, ItemParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingConfig {
    /// Bound on the half-length of the ellipsoid's longest axis.
    pub d: f64,
    pub alpha: f64,
    /// Minimum sample size before stopping is allowed.
    pub n0: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            d: 0.5,
            alpha: 0.05,
            n0: 110,
        }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) || !(self.alpha > 0.0 && self.alpha < 1.0) || self.n0 == 0 {
            return Err(CalibError::Config(format!("invalid stopping config {self:?}")));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        let c2 = chi_square_critical(self.alpha, 3);
        c2 / (self.d * self.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingDecision {
    pub stop: bool,
    pub n: usize,
    pub lambda_min: f64,
    pub threshold: f64,
}

/// Upper-tail chi-square quantile: `P(X >= q) = alpha` for `X ~ chi2(df)`.
pub fn chi_square_critical(alpha: f64, df: u32) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1), got {alpha}");
    assert!(df >= 1, "degrees of freedom must be positive");
    let k = f64::from(df) / 2.0;
    let upper_tail = |x: f64| gamma_ur(k, x / 2.0);

    let mut hi = f64::from(df).max(1.0);
    while upper_tail(hi) > alpha {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    // survival function is strictly decreasing in x
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if upper_tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest eigenvalue of a symmetric 3x3 matrix.
pub fn min_eigenvalue(j: &Matrix3<f64>) -> f64 {
    let sym = (j + j.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub fn stopping_check(j: &Matrix3<f64>, n: usize, cfg: &StoppingConfig) -> StoppingDecision {
    let lambda_min = min_eigenvalue(j);
    let threshold = cfg.threshold();
    StoppingDecision {
        stop: n >= cfg.n0 && lambda_min >= threshold,
        n,
        lambda_min,
        threshold,
    }
}

/// Quadratic form `(g_hat - g0)' J (g_hat - g0)`.
pub fn ellipsoid_distance(gamma_hat: &Gamma, j: &Matrix3<f64>, gamma0: &Gamma) -> f64 {
    let diff = gamma_hat.to_vector() - gamma0.to_vector();
    (diff.transpose() * j * diff)[(0, 0)]
}

/// Whether `gamma0` lies in the confidence ellipsoid centred at `gamma_hat`.
pub fn ellipsoid_contains(gamma_hat: &Gamma, j: &Matrix3<f64>, gamma0: &Gamma, alpha: f64) -> bool {
    ellipsoid_distance(gamma_hat, j, gamma0) <= chi_square_critical(alpha, 3)
}

/// Delta-method covariance of `(a, b, c)` implied by the information `j` at `gamma_hat`.
pub fn natural_covariance(gamma_hat: &Gamma, j: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let inv = j
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(CalibError::SingularInformation { best: Some(*gamma_hat) })?;
    let (b1, b2) = (gamma_hat.beta1, gamma_hat.beta2);
    // rows: d(a, b, c) / d(beta1, beta2, c)
    let t = Matrix3::new(
        0.0,
        1.0,
        0.0,
        -1.0 / b2,
        b1 / (b2 * b2),
        0.0,
        0.0,
        0.0,
        1.0,
    );
    Ok(t * inv * t.transpose())
}

/// Per-parameter coverage from the axis projection of the ellipsoid onto `(a, b, c)`.
pub fn marginal_coverage(
    gamma_hat: &Gamma,
    j: &Matrix3<f64>,
    item_true: &ItemParams,
    alpha: f64,
) -> Result<(bool, bool, bool)> {
    let cov = natural_covariance(gamma_hat, j)?;
    let est = gamma_hat.to_item()?;
    let c2 = chi_square_critical(alpha, 3);
    let err = Vector3::new(est.a() - item_true.a(), est.b() - item_true.b(), est.c() - item_true.c());
    let covered = |i: usize| err[i].abs() <= (c2 * cov[(i, i)].max(0.0)).sqrt();
    Ok((covered(0), covered(1), covered(2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integral of the chi-square density over `[0, q]`.
    fn chi2_cdf_by_quadrature(q: f64, df: u32) -> f64 {
        let k = f64::from(df) / 2.0;
        let norm = statrs::function::gamma::gamma(k) * 2f64.powf(k);
        let dens = |x: f64| if x <= 0.0 { 0.0 } else { x.powf(k - 1.0) * (-x / 2.0).exp() / norm };
        // substitute x = u^2 to remove the sqrt singularity at 0 for df = 1
        let f = |u: f64| 2.0 * u * dens(u * u);
        let upper = q.sqrt();
        let steps = 20_000;
        let h = upper / steps as f64;
        let mut s = f(0.0) + f(upper);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn critical_value_against_quadrature() {
        let q = chi_square_critical(0.05, 3);
        assert!((q - 7.81473).abs() < 1e-4, "{q}");
        assert!((1.0 - chi2_cdf_by_quadrature(q, 3) - 0.05).abs() < 1e-9);
        assert!((1.0 - chi2_cdf_by_quadrature(7.81473, 3) - 0.05).abs() < 1e-5);
    }

    #[test]
    fn critical_value_df2_closed_form() {
        let q = chi_square_critical(0.5, 2);
        assert!((q - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn critical_value_decreases_in_alpha() {
        assert!(chi_square_critical(0.999, 3) < chi_square_critical(0.9, 3));
        assert!(chi_square_critical(0.999, 3) > 0.0);
    }

    #[test]
    fn stopping_threshold_examples() {
        let cfg = StoppingConfig { d: 0.5, alpha: 0.05, n0: 110 };
        assert!((cfg.threshold() - 31.259).abs() < 1e-3);
        assert!(stopping_check(&(Matrix3::identity() * 32.0), 200, &cfg).stop);
        assert!(!stopping_check(&(Matrix3::identity() * 31.0), 200, &cfg).stop);
        assert!(!stopping_check(&Matrix3::from_diagonal(&Vector3::new(1000.0, 1000.0, 5.0)), 200, &cfg).stop);
        assert!(!stopping_check(&(Matrix3::identity() * 32.0), 100, &cfg).stop);
        let d = stopping_check(&Matrix3::from_diagonal(&Vector3::new(1.0, -2.0, 3.0)), 500, &cfg);
        assert!(!d.stop && (d.lambda_min + 2.0).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_examples() {
        let g0 = Gamma::new(0.0, 1.0, 0.1);
        let j = Matrix3::new(5.0, 1.0, 0.5, 1.0, 4.0, 0.2, 0.5, 0.2, 3.0);
        assert!(ellipsoid_contains(&g0, &j, &g0, 0.05));
        let far = Gamma::new(8f64.sqrt(), 1.0, 0.1);
        assert!(!ellipsoid_contains(&far, &Matrix3::identity(), &g0, 0.05));
        let near = Gamma::new(1.9f64.sqrt(), 1.0, 0.1);
        assert!(ellipsoid_contains(&near, &(Matrix3::identity() * 4.0), &g0, 0.05));
    }

    #[test]
    fn marginal_coverage_at_truth_and_jacobian() {
        let item = ItemParams::new(1.0, 0.0, 0.1).unwrap();
        let g = item.to_gamma();
        let j = Matrix3::new(40.0, 2.0, 1.0, 2.0, 30.0, 0.5, 1.0, 0.5, 60.0);
        assert_eq!(marginal_coverage(&g, &j, &item, 0.05).unwrap(), (true, true, true));
        let cov = natural_covariance(&g, &j).unwrap();
        let inv = j.try_inverse().unwrap();
        assert!((cov[(1, 1)] - inv[(0, 0)]).abs() < 1e-15);
        assert!((cov[(0, 0)] - inv[(1, 1)]).abs() < 1e-15);
        assert!(matches!(
            marginal_coverage(&g, &Matrix3::zeros(), &item, 0.05),
            Err(CalibError::SingularInformation { .. })
        ));
    }

    #[test]
    fn ellipsoid_coverage_implies_c_interval() {
        // c enters linearly, so the projection bound is exact in that direction
        let item = ItemParams::new(1.0, 0.0, 0.1).unwrap();
        let g0 = item.to_gamma();
        let j = Matrix3::new(40.0, 2.0, 1.0, 2.0, 30.0, 0.5, 1.0, 0.5, 60.0);
        let c2 = chi_square_critical(0.05, 3);
        let inv = j.try_inverse().unwrap();
        for k in 0..200 {
            let dc = -0.6 + 0.006 * k as f64;
            let gh = Gamma::new(g0.beta1 + 0.3 * dc, g0.beta2 - 0.2 * dc, g0.c + dc);
            if ellipsoid_contains(&gh, &j, &g0, 0.05) {
                assert!(dc.abs() <= (c2 * inv[(2, 2)]).sqrt() + 1e-12);
            }
        }
    }
}
