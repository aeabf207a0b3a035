//! Item parameter estimation.
//!
//! Three estimators are provided: the proportion-correct guess for `c` from
//! low-ability examinees, the two-parameter fit of `(a, b)` with `c` frozen,
//! and the full maximum likelihood fit of `(beta1, beta2, c)`. The last two
//! share one box-constrained damped Newton solver driven by the observed
//! information.

use nalgebra::{Matrix3, Vector3};

use crate::error::{CalibError, Result};
use crate::irt_model::{likelihood_derivatives, log_likelihood, Gamma, LikelihoodDerivatives, ItemParams, Observed, ParamBounds};

const MAX_HALVINGS: usize = 30;
/// Longest step (max-norm, in `gamma` units) tried before halving; near-flat ridges
/// otherwise produce Newton steps many orders too long.
const MAX_STEP: f64 = 1.0;
/// Relative precision of a long floating-point log-likelihood sum.
const LL_RESOLUTION: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Gradient tolerance per observation; the solver stops once
    /// `max |score| <= grad_tol * n` over the free coordinates.
    pub grad_tol: f64,
    /// Relative step tolerance.
    pub step_tol: f64,
    pub bounds: ParamBounds,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            bounds: ParamBounds::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(CalibError::Config(format!("invalid fit options {self:?}")));
        }
        self.bounds.validate()
    }
}

/// Outcome of a successful likelihood maximization.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub gamma: Gamma,
    pub log_likelihood: f64,
    pub score: Vector3<f64>,
    /// Observed information at `gamma`.
    pub information: Matrix3<f64>,
    pub iterations: usize,
    /// Coordinates `(beta1, beta2, c)` held at a bound of the parameter box.
    pub active: [bool; 3],
    /// Log-likelihood of every accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

impl MleFit {
    pub fn derivatives(&self) -> LikelihoodDerivatives {
        LikelihoodDerivatives {
            log_likelihood: self.log_likelihood,
            score: self.score,
            information: self.information,
        }
    }
}

/// Result of the `(a, b)` fit with `c` held fixed.
#[derive(Debug, Clone)]
pub struct AbFit {
    pub item: ItemParams,
    pub a_at_bound: bool,
    pub b_at_bound: bool,
    pub fit: MleFit,
}

/// Proportion correct among low-ability examinees, clamped into `[0.001, c_max]`.
pub fn initial_c_estimate<R: Observed>(data: &[R], bounds: &ParamBounds) -> Result<f64> {
    if data.is_empty() {
        return Err(CalibError::DegenerateData("no responses for the initial guessing estimate".into()));
    }
    let correct = data.iter().filter(|r| r.correct()).count();
    let p = correct as f64 / data.len() as f64;
    Ok(p.clamp(0.001, bounds.c_max))
}

/// Fits `(a, b)` by maximum likelihood with `c` frozen at `c_fixed`.
pub fn fit_ab_given_c<R: Observed>(data: &[R], c_fixed: f64, opts: &FitOptions) -> Result<AbFit> {
    check_data(data, 2)?;
    if !(0.0..1.0).contains(&c_fixed) {
        return Err(CalibError::Domain(format!("fixed guessing parameter {c_fixed} outside [0, 1)")));
    }
    let init = Gamma::new(0.0, 1.0, c_fixed);
    let fit = maximize(data, init, [true, true, false], None, opts)?;
    let item = fit.gamma.to_item()?;
    Ok(AbFit {
        item,
        a_at_bound: fit.active[1],
        b_at_bound: fit.active[0],
        fit,
    })
}

/// Full three-parameter maximum likelihood fit started from `init`.
pub fn fit_mle<R: Observed>(data: &[R], init: Gamma, opts: &FitOptions) -> Result<MleFit> {
    check_data(data, 3)?;
    maximize(data, init, [true; 3], None, opts)
}

/// [`fit_mle`] with the derivatives at `init` already known, e.g. carried
/// forward from the previous fit plus the contribution of newly added data.
pub fn fit_mle_warm<R: Observed>(
    data: &[R],
    init: Gamma,
    at_init: LikelihoodDerivatives,
    opts: &FitOptions,
) -> Result<MleFit> {
    check_data(data, 3)?;
    maximize(data, init, [true; 3], Some(at_init), opts)
}

fn check_data<R: Observed>(data: &[R], min_distinct: usize) -> Result<()> {
    if data.len() < 2 {
        return Err(CalibError::DegenerateData(format!("{} record(s) cannot identify the item", data.len())));
    }
    let correct = data.iter().filter(|r| r.correct()).count();
    if correct == 0 || correct == data.len() {
        return Err(CalibError::DegenerateData("all responses are identical".into()));
    }
    let mut distinct: Vec<f64> = Vec::with_capacity(min_distinct);
    for r in data {
        let t = r.theta_observed();
        if !distinct.contains(&t) {
            distinct.push(t);
            if distinct.len() >= min_distinct {
                return Ok(());
            }
        }
    }
    Err(CalibError::DegenerateData(format!(
        "need at least {min_distinct} distinct trait levels, found {}",
        distinct.len()
    )))
}

/// Box for `gamma`: `beta2 = a`, `beta1 = -a*b` so the `b` bounds scale with `beta2`.
struct GammaBox {
    bounds: ParamBounds,
    free: [bool; 3],
}

impl GammaBox {
    fn limits(&self, v: &Vector3<f64>) -> [(f64, f64); 3] {
        let b = &self.bounds;
        [
            (-b.b_max * v[1], -b.b_min * v[1]),
            (b.a_min, b.a_max),
            (b.c_min, b.c_max),
        ]
    }

    fn project(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let mut out = *v;
        if self.free[1] {
            out[1] = out[1].clamp(self.bounds.a_min, self.bounds.a_max);
        }
        if self.free[2] {
            out[2] = out[2].clamp(self.bounds.c_min, self.bounds.c_max);
        }
        if self.free[0] {
            let (lo, hi) = self.limits(&out)[0];
            out[0] = out[0].clamp(lo, hi);
        }
        out
    }

    /// Coordinates sitting on a bound with the gradient pushing outward.
    fn active(&self, v: &Vector3<f64>, grad: &Vector3<f64>) -> [bool; 3] {
        let lims = self.limits(v);
        let mut act = [false; 3];
        for i in 0..3 {
            if !self.free[i] {
                continue;
            }
            let (lo, hi) = lims[i];
            let eps = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            act[i] = (v[i] <= lo + eps && grad[i] < 0.0) || (v[i] >= hi - eps && grad[i] > 0.0);
        }
        act
    }

    fn on_bound(&self, v: &Vector3<f64>) -> [bool; 3] {
        let lims = self.limits(v);
        let mut on = [false; 3];
        for i in 0..3 {
            if self.free[i] {
                let (lo, hi) = lims[i];
                let eps = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
                on[i] = v[i] <= lo + eps || v[i] >= hi - eps;
            }
        }
        on
    }
}

fn maximize<R: Observed>(
    data: &[R],
    init: Gamma,
    free: [bool; 3],
    at_init: Option<LikelihoodDerivatives>,
    opts: &FitOptions,
) -> Result<MleFit> {
    opts.validate()?;
    let bx = GammaBox { bounds: opts.bounds, free };
    let tol = opts.grad_tol * data.len() as f64;

    let mut x = bx.project(&init.to_vector());
    let mut d = match at_init {
        Some(d) if x == init.to_vector() => d,
        _ => likelihood_derivatives(&Gamma::from_vector(&x), data),
    };
    let mut history = vec![d.log_likelihood];

    for iter in 0..opts.max_iter {
        let act = bx.active(&x, &d.score);
        let idx: Vec<usize> = (0..3).filter(|&i| free[i] && !act[i]).collect();
        let grad_norm = idx.iter().map(|&i| d.score[i].abs()).fold(0.0, f64::max);
        if grad_norm <= tol {
            return Ok(finish(x, d, iter, bx.on_bound(&x), history));
        }

        // a coordinate on its bound whose Newton move points outward is fixed for this step
        let on = bx.on_bound(&x);
        let mut idx = idx;
        let dirs = loop {
            let g_free = nalgebra::DVector::from_iterator(idx.len(), idx.iter().map(|&i| d.score[i]));
            let j_free = nalgebra::DMatrix::from_fn(idx.len(), idx.len(), |r, c| d.information[(idx[r], idx[c])]);
            let dirs = search_directions(&j_free, &g_free);
            let lims = bx.limits(&x);
            let outward = idx.iter().enumerate().position(|(k, &i)| {
                on[i] && ((x[i] - lims[i].0).abs() < (x[i] - lims[i].1).abs()) == (dirs[0][k] < 0.0)
            });
            match outward {
                Some(k) if idx.len() > 1 => {
                    idx.remove(k);
                }
                _ => break dirs,
            }
        };

        // predicted gain below what the summed log-likelihood can resolve: numerically optimal
        let gain: f64 = idx.iter().enumerate().map(|(k, &i)| d.score[i] * dirs[0][k]).sum();
        if gain <= LL_RESOLUTION * (1.0 + d.log_likelihood.abs()) && grad_norm <= tol.max(1e-12) * 1e4 {
            return Ok(finish(x, d, iter, bx.on_bound(&x), history));
        }

        // the full step usually succeeds, so evaluate all derivatives there up front
        let mut accepted: Option<(Vector3<f64>, Option<LikelihoodDerivatives>)> = None;
        'dirs: for (n_dir, dir) in dirs.iter().enumerate() {
            let mut step = Vector3::zeros();
            for (k, &i) in idx.iter().enumerate() {
                step[i] = dir[k];
            }
            let mut t = (MAX_STEP / step.amax()).min(1.0);
            for h in 0..=MAX_HALVINGS {
                let cand = bx.project(&(x + step * t));
                let (ll, full) = if n_dir == 0 && h == 0 {
                    let full = likelihood_derivatives(&Gamma::from_vector(&cand), data);
                    (full.log_likelihood, Some(full))
                } else {
                    (log_likelihood(&Gamma::from_vector(&cand), data), None)
                };
                if ll.is_finite() && ll >= d.log_likelihood {
                    accepted = Some((cand, full));
                    break 'dirs;
                }
                t *= 0.5;
            }
        }

        let Some((next, full)) = accepted else {
            // no ascent along any direction: numerically at the optimum
            if grad_norm <= tol.max(1e-12) * 1e4 {
                return Ok(finish(x, d, iter, bx.on_bound(&x), history));
            }
            return Err(CalibError::NonConvergence {
                iterations: iter,
                best: Gamma::from_vector(&x),
            });
        };

        let moved = (next - x).amax();
        x = next;
        d = full.unwrap_or_else(|| likelihood_derivatives(&Gamma::from_vector(&x), data));
        history.push(d.log_likelihood);
        if moved <= opts.step_tol * (1.0 + x.amax()) {
            return Ok(finish(x, d, iter + 1, bx.on_bound(&x), history));
        }
    }

    Err(CalibError::NonConvergence {
        iterations: opts.max_iter,
        best: Gamma::from_vector(&x),
    })
}

fn finish(
    x: Vector3<f64>,
    d: LikelihoodDerivatives,
    iterations: usize,
    active: [bool; 3],
    history: Vec<f64>,
) -> MleFit {
    MleFit {
        gamma: Gamma::from_vector(&x),
        log_likelihood: d.log_likelihood,
        score: d.score,
        information: d.information,
        iterations,
        active,
        history,
    }
}

/// Newton direction first, then Levenberg-damped variants, then plain gradient.
fn search_directions(
    j: &nalgebra::DMatrix<f64>,
    g: &nalgebra::DVector<f64>,
) -> Vec<nalgebra::DVector<f64>> {
    let mut dirs = Vec::with_capacity(4);
    let ascent = |d: &nalgebra::DVector<f64>| d.iter().all(|v| v.is_finite()) && d.dot(g) > 0.0;

    if let Some(ch) = j.clone().cholesky() {
        let d = ch.solve(g);
        if ascent(&d) {
            dirs.push(d);
        }
    }
    let scale = j.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    for mu in [1e-4, 1e-2, 1.0] {
        let damped = j + nalgebra::DMatrix::identity(j.nrows(), j.ncols()) * (mu * scale);
        if let Some(ch) = damped.cholesky() {
            let d = ch.solve(g);
            if ascent(&d) {
                dirs.push(d);
            }
        }
    }
    dirs.push(g / scale);
    dirs
}
