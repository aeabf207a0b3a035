//! The three-parameter logistic (3PL) response model.
//!
//! The probability of a correct answer at latent trait `theta` is
//! `c + (1 - c) * G`, where `G = 1 / (1 + exp(-x'beta))`, `x = (1, theta)` and
//! `beta = (-a*b, a)`. All vectors and matrices use the fixed ordering
//! `(beta1, beta2, c)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{CalibError, Result};

/// Lower and upper clamp applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Floor applied to the Bernoulli variance `P(1 - P)`.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Natural item parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemParams {
    a: f64,
    b: f64,
    c: f64,
}

impl ItemParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(CalibError::Domain(format!("discrimination must be positive, got {a}")));
        }
        if !b.is_finite() {
            return Err(CalibError::Domain(format!("difficulty must be finite, got {b}")));
        }
        if !(0.0..1.0).contains(&c) {
            return Err(CalibError::Domain(format!("guessing must lie in [0, 1), got {c}")));
        }
        Ok(Self { a, b, c })
    }

    pub const fn a(&self) -> f64 {
        self.a
    }

    pub const fn b(&self) -> f64 {
        self.b
    }

    pub const fn c(&self) -> f64 {
        self.c
    }

    pub fn to_gamma(&self) -> Gamma {
        Gamma {
            beta1: -self.a * self.b,
            beta2: self.a,
            c: self.c,
        }
    }

    pub fn from_gamma(g: &Gamma) -> Result<Self> {
        g.to_item()
    }
}

/// Reparameterized item vector `(beta1, beta2, c) = (-a*b, a, c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma {
    pub beta1: f64,
    pub beta2: f64,
    pub c: f64,
}

impl Gamma {
    pub const fn new(beta1: f64, beta2: f64, c: f64) -> Self {
        Self { beta1, beta2, c }
    }

    pub fn to_item(&self) -> Result<ItemParams> {
        if !(self.beta2 > 0.0) {
            return Err(CalibError::Domain(format!(
                "beta2 must be positive to recover discrimination, got {}",
                self.beta2
            )));
        }
        ItemParams::new(self.beta2, -self.beta1 / self.beta2, self.c)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.beta1, self.beta2, self.c)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Linear predictor `x'beta = beta1 + beta2 * theta`.
    #[inline]
    pub fn linear_predictor(&self, theta: f64) -> f64 {
        self.beta1 + self.beta2 * theta
    }
}

/// Parameter box used by the estimators, in natural coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub c_min: f64,
    pub c_max: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            a_min: 0.2,
            a_max: 3.0,
            b_min: -4.0,
            b_max: 4.0,
            c_min: 0.001,
            c_max: 0.5,
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a_min > 0.0
            && self.a_min < self.a_max
            && self.b_min < self.b_max
            && self.c_min >= 0.0
            && self.c_min < self.c_max
            && self.c_max < 1.0
            && [self.a_max, self.b_min, self.b_max].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(CalibError::Config(format!("invalid parameter bounds {self:?}")))
        }
    }

    pub fn contains(&self, item: &ItemParams) -> bool {
        (self.a_min..=self.a_max).contains(&item.a())
            && (self.b_min..=self.b_max).contains(&item.b())
            && (self.c_min..=self.c_max).contains(&item.c())
    }
}

/// Which calibration stage produced a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchTag {
    InitialC,
    InitialAb,
    CBatch,
    AbBatch,
    Random,
    DOpt,
}

impl BatchTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            BatchTag::InitialC => "INITIAL_C",
            BatchTag::InitialAb => "INITIAL_AB",
            BatchTag::CBatch => "C_BATCH",
            BatchTag::AbBatch => "AB_BATCH",
            BatchTag::Random => "RANDOM",
            BatchTag::DOpt => "DOPT",
        }
    }
}

/// A design point: the observed latent trait and its covariate `(1, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignPoint {
    pub theta_observed: f64,
}

impl DesignPoint {
    pub fn covariate(&self) -> [f64; 2] {
        [1.0, self.theta_observed]
    }
}

/// The view of a response that estimation is allowed to see.
///
/// Only the observed trait and the binary response are reachable through this
/// trait, so estimators cannot depend on the true trait.
pub trait Observed {
    fn theta_observed(&self) -> f64;
    fn correct(&self) -> bool;
}

/// One examinee's response to the item under calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseRecord {
    pub theta_observed: f64,
    pub theta_true: f64,
    pub y: u8,
    pub tag: BatchTag,
}

impl Observed for ResponseRecord {
    #[inline]
    fn theta_observed(&self) -> f64 {
        self.theta_observed
    }

    #[inline]
    fn correct(&self) -> bool {
        self.y == 1
    }
}

/// A bare `(theta_observed, y)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub theta: f64,
    pub y: bool,
}

impl Observed for Observation {
    #[inline]
    fn theta_observed(&self) -> f64 {
        self.theta
    }

    #[inline]
    fn correct(&self) -> bool {
        self.y
    }
}

/// Standard logistic function, evaluated without overflow for large `|z|`.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(G(z), 1 - G(z))` from one exponential, accurate in both tails.
#[inline]
fn logistic_pair(z: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let big = 1.0 / (1.0 + e);
    let small = e * big;
    if z >= 0.0 {
        (big, small)
    } else {
        (small, big)
    }
}

/// Item characteristic curve.
#[inline]
pub fn icc(theta: f64, item: &ItemParams) -> f64 {
    item.c + (1.0 - item.c) * logistic(item.a * (theta - item.b))
}

/// Gradient of `P` with respect to `gamma`, ordered `(beta1, beta2, c)`.
pub fn probability_gradient(g: &Gamma, theta: f64) -> Vector3<f64> {
    let (gz, one_minus_g) = logistic_pair(g.linear_predictor(theta));
    let s = (1.0 - g.c) * gz * one_minus_g;
    Vector3::new(s, s * theta, one_minus_g)
}

/// Hessian of `P` with respect to `gamma`.
pub fn probability_hessian(g: &Gamma, theta: f64) -> Matrix3<f64> {
    let (gz, one_minus_g) = logistic_pair(g.linear_predictor(theta));
    let dens = gz * one_minus_g;
    // d2P/dbeta2 = (1-c) G(1-G)(1-2G) x x', d2P/dbeta dc = -G(1-G) x, d2P/dc2 = 0
    let k = (1.0 - g.c) * dens * (one_minus_g - gz);
    Matrix3::new(
        k,
        k * theta,
        -dens,
        k * theta,
        k * theta * theta,
        -dens * theta,
        -dens,
        -dens * theta,
        0.0,
    )
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `(P, 1 - P)` with the complement formed as `(1 - c)(1 - G)`, which keeps
/// full relative precision where `P` is within rounding of 1.
#[inline]
fn prob_pair(g: &Gamma, gz: f64, one_minus_g: f64) -> (f64, f64) {
    let p = g.c + (1.0 - g.c) * gz;
    let q = (1.0 - g.c) * one_minus_g;
    (clamp_prob(p), clamp_prob(q))
}

pub fn log_likelihood<R: Observed>(g: &Gamma, data: &[R]) -> f64 {
    data.iter()
        .map(|r| {
            let (gz, h) = logistic_pair(g.linear_predictor(r.theta_observed()));
            let (p, q) = prob_pair(g, gz, h);
            if r.correct() {
                p.ln()
            } else {
                q.ln()
            }
        })
        .sum()
}

/// Score vector `U_n(gamma)`: the gradient of [`log_likelihood`].
pub fn score<R: Observed>(g: &Gamma, data: &[R]) -> Vector3<f64> {
    data.iter().fold(Vector3::zeros(), |acc, r| {
        let theta = r.theta_observed();
        let (gz, h) = logistic_pair(g.linear_predictor(theta));
        let (p, q) = prob_pair(g, gz, h);
        let resid = if r.correct() { 1.0 / p } else { -1.0 / q };
        acc + probability_gradient(g, theta) * resid
    })
}

/// Log-likelihood, score and observed information in one pass.
#[derive(Debug, Clone, Copy)]
pub struct LikelihoodDerivatives {
    pub log_likelihood: f64,
    pub score: Vector3<f64>,
    pub information: Matrix3<f64>,
}

/// Sums over disjoint data sets at the same `gamma`.
impl std::ops::AddAssign for LikelihoodDerivatives {
    fn add_assign(&mut self, rhs: Self) {
        self.log_likelihood += rhs.log_likelihood;
        self.score += rhs.score;
        self.information += rhs.information;
    }
}

pub fn likelihood_derivatives<R: Observed>(g: &Gamma, data: &[R]) -> LikelihoodDerivatives {
    // scalar accumulation of the six distinct information entries; this is the hot loop
    let (mut ll, mut u0, mut u1, mut u2) = (0.0, 0.0, 0.0, 0.0);
    let (mut i00, mut i01, mut i02, mut i11, mut i12, mut i22) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let keep = 1.0 - g.c;
    for r in data {
        let t = r.theta_observed();
        let (gz, h) = logistic_pair(g.linear_predictor(t));
        let dens = gz * h;
        let (p, q) = prob_pair(g, gz, h);
        // (y - P) / sigma^2 and the derivative of that ratio with respect to P
        let (lp, resid, weight) = if r.correct() {
            (p.ln(), 1.0 / p, 1.0 / (p * p))
        } else {
            (q.ln(), -1.0 / q, 1.0 / (q * q))
        };
        let s = keep * dens;
        let (g0, g1, g2) = (s, s * t, h);
        let k = s * (h - gz) * resid;
        ll += lp;
        u0 += g0 * resid;
        u1 += g1 * resid;
        u2 += g2 * resid;
        let (w0, w1) = (weight * g0, weight * g1);
        i00 += w0 * g0 - k;
        i01 += w0 * g1 - k * t;
        i02 += w0 * g2 + resid * dens;
        i11 += w1 * g1 - k * t * t;
        i12 += w1 * g2 + resid * dens * t;
        i22 += weight * g2 * g2;
    }
    LikelihoodDerivatives {
        log_likelihood: ll,
        score: Vector3::new(u0, u1, u2),
        information: Matrix3::new(i00, i01, i02, i01, i11, i12, i02, i12, i22),
    }
}

/// Observed information `-H`, the negative Hessian of [`log_likelihood`].
pub fn observed_information<R: Observed>(g: &Gamma, data: &[R]) -> Matrix3<f64> {
    likelihood_derivatives(g, data).information
}

/// Expected information contributed by a single examinee at `theta`.
pub fn fisher_information_point(g: &Gamma, theta: f64) -> Matrix3<f64> {
    let grad = probability_gradient(g, theta);
    let (gz, h) = logistic_pair(g.linear_predictor(theta));
    let var = (g.c + (1.0 - g.c) * gz) * (1.0 - g.c) * h;
    let var = var.max(VARIANCE_FLOOR);
    grad * grad.transpose() / var
}

/// Expected information of a whole design, summed over design points.
pub fn fisher_information<I>(g: &Gamma, thetas: I) -> Matrix3<f64>
where
    I: IntoIterator<Item = f64>,
{
    thetas
        .into_iter()
        .fold(Matrix3::zeros(), |acc, t| acc + fisher_information_point(g, t))
}
