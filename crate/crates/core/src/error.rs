use std::path::PathBuf;

use crate::irt_model::Gamma;

#[derive(Debug, thiserror::Error)]
pub enum CalibError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize, best: Gamma },

    #[error("singular information matrix")]
    SingularInformation { best: Option<Gamma> },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CalibError> = std::result::Result<T, E>;
