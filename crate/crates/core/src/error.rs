use std::fmt;

use thiserror::Error;

/// Smallness gates that guard the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// Weighted sup norm of the heat flow of the initial data (mild solver).
    MildData,
    /// Probe-estimated operator norm of the drift term (perturbed solver).
    Drift,
    /// Path norm of the heat flow of the initial data (perturbed solver).
    PerturbedData,
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Gate::MildData => "initial-data smallness",
            Gate::Drift => "drift smallness",
            Gate::PerturbedData => "perturbed initial-data smallness",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("{gate} gate failed: measured {measured:.6e}, limit {limit:.6e}")]
    GateFailed { gate: Gate, measured: f64, limit: f64 },

    #[error("iteration stopped contracting: last distance ratios {ratios:?}")]
    NonContraction { ratios: Vec<f64> },

    #[error("no convergence after {iters} iterations; best estimate {best:.6e}")]
    MaxIter { iters: usize, best: f64 },

    #[error(
        "initial-data split infeasible: best tail norm {best_tail:.6e} (target {eps1:.6e}), \
         best mid-band norm {best_mid:.6e} (target {eps2:.6e})"
    )]
    SplitInfeasible {
        best_tail: f64,
        eps1: f64,
        best_mid: f64,
        eps2: f64,
    },

    #[error("ODE step size underflow at t = {last_t:.6e}")]
    StepUnderflow { last_t: f64 },

    #[error("nonlinear increment {increment:.3e} at t = {t:.6e} exceeds stability limit {limit:.3e}")]
    CflViolation { t: f64, increment: f64, limit: f64 },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("malformed field container: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Stage tag if this error was wrapped by a pipeline stage.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
