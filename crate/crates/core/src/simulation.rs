//! Synthetic examinee pool.
//!
//! Examinees are recruited by their *observed* trait, which is what a live
//! adaptive test would report. The true trait sits one measurement error
//! away; its standard deviation shrinks with recruitment order as
//! `scale / (sqrt(n) * ln(n)^exponent)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::design::{DesignRequest, TargetSpec};
use crate::error::{CalibError, Result};
use crate::irt_model::{icc, BatchTag, ItemParams};

/// Portable generator used for every replication stream.
pub type SimRng = ChaCha8Rng;

/// Open interval of latent trait levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolConfig {
    pub pool_range: Interval,
    pub error_scale: f64,
    pub error_log_exponent: f64,
    /// Master seed for studies driven from a config file.
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            pool_range: Interval::new(-3.6, 3.6),
            error_scale: 0.5,
            error_log_exponent: 1.1,
            seed: 0,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.pool_range.is_valid() || !(self.error_scale >= 0.0) || !self.error_log_exponent.is_finite() {
            return Err(CalibError::Config(format!("invalid pool config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Examinee {
    pub theta_observed: f64,
    pub theta_true: f64,
    /// Recruitment order within the calibration run, starting at 1.
    pub index: usize,
    pub tag: BatchTag,
}

/// Measurement-error SD for the `n`-th recruit; `n = 1` is evaluated as `n = 2`.
pub fn measurement_error_sd(n: usize, cfg: &PoolConfig) -> f64 {
    let m = n.max(2) as f64;
    cfg.error_scale / (m.sqrt() * m.ln().powf(cfg.error_log_exponent))
}

/// Recruits examinees whose observed traits match `request`, numbering them
/// consecutively from `next_index`.
pub fn recruit(request: &DesignRequest, next_index: usize, cfg: &PoolConfig, rng: &mut SimRng) -> Vec<Examinee> {
    let mut out = Vec::with_capacity(request.total());
    let mut index = next_index;
    for target in &request.targets {
        for _ in 0..target.count {
            let theta_observed = match target.spec {
                TargetSpec::Point(t) => t,
                TargetSpec::Range(r) => rng.random_range(r.lo..r.hi),
            };
            let sd = measurement_error_sd(index, cfg);
            let xi = if sd > 0.0 {
                Normal::new(0.0, sd).expect("finite positive sd").sample(rng)
            } else {
                0.0
            };
            out.push(Examinee {
                theta_observed,
                theta_true: cfg.pool_range.clamp(theta_observed - xi),
                index,
                tag: target.tag,
            });
            index += 1;
        }
    }
    out
}

/// Draws a binary response at the examinee's true trait.
pub fn respond(e: &Examinee, item_true: &ItemParams, rng: &mut SimRng) -> u8 {
    u8::from(rng.random::<f64>() < icc(e.theta_true, item_true))
}
