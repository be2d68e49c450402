use crate::signal::ControlSignal;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} lies outside [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },

    #[error("state diverged at t = {t:.6} (|x| = {norm:.3e})")]
    Divergence { t: f64, norm: f64 },

    #[error("unknown catalog system `{0}`")]
    UnknownSystem(String),

    #[error(
        "descent did not reach tolerance {tol:.3e} within {iters} iterations (best |g| = {best:.3e})"
    )]
    NonConvergence {
        tol: f64,
        iters: usize,
        best: f64,
        iterate: Box<ControlSignal>,
    },

    #[error(
        "line search stalled with |g| = {grad_norm:.3e} above threshold; the grid is likely too coarse"
    )]
    Stalled {
        grad_norm: f64,
        iterate: Box<ControlSignal>,
    },

    #[error("no finite drift gains fit the samples: {0}")]
    NoFiniteGain(String),

    #[error("Riccati solution exceeded the blow-up threshold at t = {t:.6} (lambda_max = {lambda:.3e})")]
    RiccatiBlowup { t: f64, lambda: f64 },

    #[error("terminal-cost curvature is zero; a positive window delta is required")]
    MissingDelta,

    #[error("eps0 = {eps0} inadmissible: 1 - (alpha_Q/2) C2 eps0^2 = {denominator:.3e} <= 0")]
    InadmissibleEps0 { eps0: f64, denominator: f64 },

    #[error("enumeration budget exceeded: {candidates} candidates (cap {cap})")]
    BudgetExceeded { candidates: usize, cap: usize },

    #[error("replanning interval {delta} is not aligned with the grid step {dt}")]
    MisalignedDelta { delta: f64, dt: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
