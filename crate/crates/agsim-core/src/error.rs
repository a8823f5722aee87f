use thiserror::Error;

/// Errors raised across the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NonUnitaryInput(f64),

    #[error("(A, B) pair violates the symplectic conditions (max deviation {0:.3e})")]
    NotSymplectic(f64),

    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),

    #[error("{what} of size {size} exceeds the guard {limit}")]
    TooLarge { what: &'static str, size: usize, limit: usize },

    #[error("hafnian needs an even dimension, got {0}")]
    OddSize(usize),

    #[error("rank {rank} exceeds the guard {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("polynomial caps or variable counts differ")]
    CapMismatch,

    #[error("coefficient table would need {needed} entries, guard is {limit}")]
    CapOverflow { needed: u128, limit: u128 },

    #[error("bad variable grouping: {0}")]
    BadGrouping(String),

    #[error("photon count {value} exceeds cutoff {cutoff}")]
    CutoffExceeded { value: usize, cutoff: usize },

    #[error("conditional mass {children:.3e} deviates from parent marginal {parent:.3e}")]
    NormalizationFailure { parent: f64, children: f64 },

    #[error("truncation leakage {0:.3e} above tolerance")]
    LeakageAboveTolerance(f64),

    #[error("rejection envelope violated: ratio {ratio:.4} at alpha = ({re:.3}, {im:.3})")]
    EnvelopeViolation { ratio: f64, re: f64, im: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("observable on mode {0} has zero two-norm")]
    ZeroNormObservable(usize),

    #[error("sampler failure: {0}")]
    SamplerFailure(String),

    #[error("guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("feedforward table has no entry for outcome {0:?}")]
    BranchTableIncomplete(Vec<usize>),

    #[error("estimate deviates from quadrature oracle by {0:.3e}")]
    QuadratureMismatch(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
