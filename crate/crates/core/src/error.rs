//! Error types shared across the crate.

use thiserror::Error;

/// Solver mode: which sign of the variational inequality is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Noncooperative equilibrium; requires a positive definite operator.
    Nne,
    /// Mixed (cooperative within markets) equilibrium; requires a negative
    /// definite operator.
    Mne,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Nne => write!(f, "nne"),
            Mode::Mne => write!(f, "mne"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("eigenvalue estimation did not converge after {iters} iterations (last estimate {last:.6e})")]
    Convergence { iters: usize, last: f64 },

    #[error("state trajectory blew up at t = {time}")]
    Divergence { time: f64 },

    #[error(
        "definiteness certificate failed for mode {mode}: rayleigh bounds [{lo:.6e}, {hi:.6e}]"
    )]
    Definiteness { lo: f64, hi: f64, mode: Mode },

    #[error("iteration limit {max_iters} exceeded, last gap {last_gap:.6e}")]
    MaxIters {
        max_iters: usize,
        last_gap: f64,
        gap_trace: Vec<f64>,
    },

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("multiplier bracket [{lo}, {hi}] does not straddle target (g = [{g_lo:.6e}, {g_hi:.6e}])")]
    Bracket {
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("operator is not self-adjoint: deviation {0:.3e}")]
    NotSelfAdjoint(f64),

    #[error("perturbation schedule infeasible at k = {k}: {msg}")]
    ScheduleInfeasible { k: usize, msg: String },

    #[error("stability thresholds violated: {0}")]
    StabilityThreshold(String),

    #[error("segment {index}: {source}")]
    Segment {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
