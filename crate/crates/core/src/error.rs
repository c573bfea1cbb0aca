use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("edge ({src}, {dst}) out of range for {n} nodes")]
    IndexOutOfRange { src: usize, dst: usize, n: usize },
    #[error("edge ({src}, {dst}) has negative weight {weight}")]
    NegativeWeight { src: usize, dst: usize, weight: f64 },
    #[error("duplicate edge ({src}, {dst})")]
    DuplicateEdge { src: usize, dst: usize },
    #[error("row {0} has no strictly positive entry")]
    ZeroRow(usize),
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric: |m[{row}][{col}] - m[{col}][{row}]| = {gap}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error(
        "step size dt={dt} is not smaller than 1/d={limit} (d={damping}); forward Euler would flip \
         the sign of the damping term and the iteration becomes unstable"
    )]
    StepTooLarge { dt: f64, damping: f64, limit: f64 },
    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },
    #[error("node {0} has an empty attention support")]
    EmptySupport(usize),
    #[error("row {row} of matrix {index} is not stochastic (sum {sum})")]
    NotStochastic { index: usize, row: usize, sum: f64 },
    #[error("positive entry {value} at ({row}, {col}) of matrix {index} is below zeta={zeta}")]
    ZetaViolated { index: usize, row: usize, col: usize, value: f64, zeta: f64 },
    #[error("zero eigenvalue has multiplicity {0}; the graph must be connected")]
    RepeatedZeroEigenvalue(usize),
    #[error("training diverged at epoch {0}")]
    Divergence(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::NonConvergence { .. } | Error::NonFiniteState { .. } | Error::Divergence(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
