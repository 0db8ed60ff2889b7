use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed FCIDUMP header near token `{token}`: {reason}")]
    Header { token: String, reason: String },

    #[error("FCIDUMP parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("inconsistent integral data: {0}")]
    DataConsistency(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("SCF did not converge after {iterations} iterations (last energy {energy:.10})")]
    NotConverged { iterations: usize, energy: f64 },

    #[error(
        "<S^2> = {target} is not reachable with |lambda| <= {lambda_max}; \
         achieved range [{achieved_min:.6}, {achieved_max:.6}]"
    )]
    ConstraintInfeasible {
        target: f64,
        lambda_max: f64,
        achieved_min: f64,
        achieved_max: f64,
    },

    #[error(
        "<S^2>(lambda) jumps across target {target} at lambda = {lambda:.8} \
         (branch values {s2_below:.6} / {s2_above:.6})"
    )]
    BranchDiscontinuity {
        target: f64,
        lambda: f64,
        s2_below: f64,
        s2_above: f64,
    },

    #[error("incompatible determinants: {0}")]
    IncompatibleDeterminants(String),

    #[error("NOCI basis is empty")]
    EmptyBasis,

    #[error("NOCI overlap matrix has no retained modes")]
    DegenerateBasis,

    #[error("internal consistency check failed: {0}")]
    Inconsistency(String),

    #[error("determinant space of {count} exceeds the cap of {cap}")]
    SizeCap { count: u128, cap: u128 },

    #[error("Davidson failed to converge: max residual {residual:.3e} after {iterations} iterations")]
    Davidson { residual: f64, iterations: usize },

    #[error("scan produced no successful grid points")]
    EmptyScan,

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
