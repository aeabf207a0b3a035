use nalgebra::Matrix3;

use crate::irt_model::{fisher_information, Gamma, LikelihoodDerivatives, ResponseRecord};

/// Everything a calibration run has accumulated so far.
#[derive(Debug, Clone)]
pub struct CalibrationState {
    pub records: Vec<ResponseRecord>,
    pub gamma_hat: Gamma,
    /// Observed information at `gamma_hat`.
    pub information: Matrix3<f64>,
    /// Running derivative sums at `gamma_hat` over `records`, when known.
    pub derivatives: Option<LikelihoodDerivatives>,
    /// Recruitment index the next examinee will receive.
    pub next_index: usize,
    pub iterations: usize,
    /// Iterations whose guessing range had to fall back to the pool floor.
    pub fallback_iterations: usize,
}

impl CalibrationState {
    pub fn new(gamma_hat: Gamma) -> Self {
        Self {
            records: Vec::new(),
            gamma_hat,
            information: Matrix3::zeros(),
            derivatives: None,
            next_index: 1,
            iterations: 0,
            fallback_iterations: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Expected information of the collected design at `gamma_hat`.
    pub fn design_information(&self) -> Matrix3<f64> {
        fisher_information(&self.gamma_hat, self.records.iter().map(|r| r.theta_observed))
    }
}
