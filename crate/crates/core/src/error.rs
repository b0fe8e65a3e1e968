use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants fall into two families that callers (notably the CLI) map onto
/// distinct exit codes: precondition/protocol violations and numerical
/// failures. See [`OckrError::is_numerical`].
#[derive(Debug, Error)]
pub enum OckrError {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed JSON in {context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated value block for view {view}: expected {expected} bytes, found {found}")]
    TruncatedBlock {
        view: String,
        expected: usize,
        found: usize,
    },

    #[error("view key mismatch: {0}")]
    ViewKeyMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("zero vector encountered at row {row} of view {view}: cannot normalise")]
    ZeroVector { view: String, row: usize },

    #[error("row {row} of view {view} declared normalised but not (norm {norm})")]
    NotNormalised { view: String, row: usize, norm: f64 },

    #[error("invalid row metadata: {0}")]
    InvalidRow(String),

    #[error("missing view {0}")]
    MissingView(String),

    #[error("not enough rows: need at least {needed}, found {found}")]
    TooFewRows { needed: usize, found: usize },

    #[error("degenerate bandwidth: all training rows are identical")]
    DegenerateBandwidth,

    #[error("matrix is not symmetric: |K[{i},{j}] - K[{j},{i}]| = {gap}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("factorisation failed even with jitter {jitter:e}")]
    FactorisationFailed { jitter: f64 },

    #[error("target cardinality {target} exceeds problem size {n}")]
    TargetTooLarge { target: usize, n: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("unknown client {0}")]
    UnknownClient(String),

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("empty class: {0}")]
    EmptyClass(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl OckrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        OckrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        OckrError::Json {
            context: context.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery (factorisation,
    /// degenerate bandwidth) as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            OckrError::FactorisationFailed { .. } | OckrError::DegenerateBandwidth
        )
    }
}

pub type Result<T> = std::result::Result<T, OckrError>;
