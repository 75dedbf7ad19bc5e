//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by kernel construction, linear algebra and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands do not conform for the attempted operation.
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// A dimension or parameter is outside its valid range.
    #[error("invalid argument for {op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    /// The result of an operation would exceed addressable size.
    #[error("dimension overflow in {op}: {rows} x {cols} does not fit in usize")]
    DimensionOverflow {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    /// A matrix expected to be symmetric is not, beyond tolerance.
    #[error("matrix is not symmetric: max asymmetry {max_asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotSymmetric {
        max_asymmetry: f64,
        tolerance: f64,
    },

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index}); retry with a larger jitter")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// An iterative routine did not converge.
    #[error("{op} did not converge after {iterations} iterations")]
    NoConvergence { op: &'static str, iterations: usize },

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value encountered in {op}")]
    NonFinite { op: &'static str },

    /// A solve met its factorization but the residual check failed.
    #[error("solve residual {residual:.3e} exceeds bound {bound:.3e}; the system is too ill-conditioned, retry with a larger jitter")]
    ResidualTooLarge { residual: f64, bound: f64 },

    /// A node's aggregated feature column has zero norm, so the
    /// normalized scaling factor is undefined.
    #[error("normalized scaling undefined: aggregated feature column of node {node} has zero norm")]
    ZeroNormColumn { node: usize },

    /// A graph observation violates a caller-supplied cap.
    #[error("degree {degree} of node {node} exceeds max_degree {max_degree}")]
    DegreeOutOfRange {
        node: usize,
        degree: usize,
        max_degree: usize,
    },

    /// Structural invariant of a graph is violated.
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// Dataset-level inconsistency.
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    /// A mandatory dataset file is missing.
    #[error("missing dataset file: {0}")]
    MissingFile(String),

    /// A dataset file exists but cannot be parsed.
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    /// The Kronecker backend would materialize too large a matrix.
    #[error("naive Kronecker factor needs {entries} entries (cap {cap}); use the decoupled backend")]
    KronTooLarge { entries: u128, cap: u128 },

    /// A correlation drifted outside [-1, 1] beyond the diagnostic
    /// threshold, which indicates a backend bug rather than rounding.
    #[error("correlation {value:.6e} exceeds 1 + clamp_eps ({clamp_eps:.1e}) at entry ({row}, {col})")]
    CorrelationOutOfRange {
        value: f64,
        clamp_eps: f64,
        row: usize,
        col: usize,
    },

    /// A running covariance diagonal became non-positive.
    #[error("non-positive covariance diagonal {value:.3e} at node {node}")]
    NonPositiveDiagonal { node: usize, value: f64 },

    /// Readout with jumping knowledge was asked without all levels.
    #[error("jumping-knowledge readout needs levels 0..={expected}, got {got}")]
    MissingLevels { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    /// A binary kernel file does not follow the expected layout.
    #[error("bad kernel file: {0}")]
    BadKernelFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
