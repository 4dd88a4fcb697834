use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("grid needs m >= 2 nodes and d >= 1 coordinates, got m={m}, d={d}")]
    InvalidGrid { m: usize, d: usize },
    #[error("expected shape {expected:?} ({} values), found {found} values", expected.0 * expected.1)]
    ShapeMismatch {
        expected: (usize, usize),
        found: usize,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("norm exponent must be a finite p >= 1, got {0}")]
    InvalidExponent(f64),
    #[error("space has no smoothness constants")]
    MissingSmoothness,
    #[error("smoothness needs 1 < p <= 2 and 0 < D < inf, got p={p}, D={constant}")]
    InvalidSmoothness { p: f64, constant: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("contraction constant must lie in (0, 1), got {0}")]
    InvalidGamma(f64),
    #[error("supplied x* is not a fixed point: ||F(x*) - x*|| = {0:e}")]
    NotAFixedPoint(f64),
    #[error("x* is not a root: ||G(x*)|| = {0:e}")]
    NotARoot(f64),
    #[error("monotonicity bounds need 0 < c1 <= c2 < inf, got c1={c1}, c2={c2}")]
    InvalidBounds { c1: f64, c2: f64 },
    #[error("need theta >= 1 and 0 < rho < 1, got theta={theta}, rho={rho}")]
    InvalidConstants { theta: f64, rho: f64 },
    #[error("no sign change bracketing a root at node {node} (t={t})")]
    NoBracket { node: usize, t: f64 },
    #[error("Picard iteration did not reach {tol:e} in {iterations} iterations")]
    NoFixedPoint { tol: f64, iterations: usize },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("tail exponent must exceed 1, got {0}")]
    InvalidTailExponent(f64),
    #[error("{name} must be finite and non-negative, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("certificate bound sequence `{0}` has a negative or non-finite entry")]
    InvalidBounds(&'static str),
    #[error("truncation threshold scale alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("step size alpha_{n} = {value} is outside (0, 1)")]
    OutOfRange { n: usize, value: f64 },
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error("custom schedule has {len} entries, index {n} requested")]
    Exhausted { n: usize, len: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("noise gain |lambda_{step}| = {lambda} exceeds C(1 + max ||Y_k||) = {bound}")]
    GainContract {
        step: usize,
        lambda: f64,
        bound: f64,
    },
    #[error("iterate diverged at step {step} (error {error:e})")]
    Divergence { step: usize, error: f64 },
    #[error("no index n < {limit} with theta * alpha_n < 1")]
    NoStartIndex { limit: usize },
    #[error("need at least one step")]
    NoSteps,
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("window [{start}, {end}] exceeds the {available} partial sums available")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        available: usize,
    },
    #[error("need at least {needed} usable points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("need at least {needed} replications, got {found}")]
    TooFewReplications { needed: usize, found: usize },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}
