use thiserror::Error;

/// Everything that can go wrong in estimation and inference.
///
/// Variants split into two families: input/configuration problems
/// ([`DcmmError::is_validation`]) and numerical degeneracies hit while
/// running the spectral pipeline. The CLI maps them to exit codes 2 and 3.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DcmmError {
    #[error("invalid model: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("eigensolver did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("eigen-gap failure: lambda_1 = {lambda1} is too close to lambda_{index} = {other}")]
    SingularGap { lambda1: f64, index: usize, other: f64 },

    #[error("leading eigenvector entry at node {node} is {value:e}, below tolerance {tol:e}")]
    DegenerateLeadingVector { node: usize, value: f64, tol: f64 },

    #[error("successive projection is rank deficient at round {round}")]
    RankDeficient { round: usize },

    #[error("degenerate simplex: condition number {condition:e}")]
    DegenerateSimplex { condition: f64 },

    #[error("spectral degeneracy: c_{community} argument is {value:e}")]
    SpectralDegeneracy { community: usize, value: f64 },

    #[error("membership reconstruction failed at node {node}: zero normalizer")]
    Reconstruction { node: usize },

    #[error("degenerate denominator {symbol}: {value:e}")]
    Degeneracy { symbol: String, value: f64 },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("missing influence matrix for pair ({0}, {1})")]
    MissingPair(usize, usize),

    #[error("experiment aborted: {skipped} of {total} replicates failed (first: {first})")]
    TooManySkips { skipped: usize, total: usize, first: String },
}

impl DcmmError {
    /// True for errors caused by bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DcmmError::Validation(_)
                | DcmmError::Config(_)
                | DcmmError::Shape(_)
                | DcmmError::Parse { .. }
                | DcmmError::Io(_)
                | DcmmError::Model(_)
                | DcmmError::MissingPair(..)
        )
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            2
        } else {
            3
        }
    }
}

impl From<std::io::Error> for DcmmError {
    fn from(e: std::io::Error) -> Self {
        DcmmError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for DcmmError {
    fn from(e: serde_json::Error) -> Self {
        DcmmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DcmmError>;
