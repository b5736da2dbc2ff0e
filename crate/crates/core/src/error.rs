//! Crate-wide error type.
//!
//! Variants are grouped by the exit code the CLI reports for them:
//! usage errors (1), data errors (2) and numerical errors (3).

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // --- usage -----------------------------------------------------------
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // --- data ------------------------------------------------------------
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("edge ({src}, {dst}) references node {node} but the graph has {num_nodes} nodes")]
    EndpointOutOfRange {
        src: usize,
        dst: usize,
        node: usize,
        num_nodes: usize,
    },

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("self-loop on node {0} (self-loops are disabled)")]
    SelfLoop(usize),

    #[error("feature matrix has {rows} rows but the graph has {num_nodes} nodes")]
    FeatureRowMismatch { rows: usize, num_nodes: usize },

    #[error("feature row {row} has dimension {got}, expected {expected}")]
    FeatureDimMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },

    #[error("label vector has {rows} entries but the graph has {num_nodes} nodes")]
    LabelRowMismatch { rows: usize, num_nodes: usize },

    #[error("node id {node} out of range (graph has {num_nodes} nodes)")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("{0} graph has no edges after splitting")]
    EmptySplit(&'static str),

    #[error(
        "not enough non-neighbours of node {fixed}: need {needed}, found {available}"
    )]
    InsufficientNegatives {
        fixed: usize,
        needed: usize,
        available: usize,
    },

    #[error("cannot add {requested} edges: only {available} absent node pairs")]
    InsufficientAbsentPairs { requested: usize, available: usize },

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("class id {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    // --- numerical -------------------------------------------------------
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("backward error: {0}")]
    Backward(String),

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("gradient check failed: {0}")]
    GradientMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    /// Process exit code for this error: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Shape { .. }
            | Error::NonFinite(_)
            | Error::NonFiniteLoss { .. }
            | Error::NonFiniteGradient(_)
            | Error::Backward(_)
            | Error::MissingGradient(_)
            | Error::GradientMismatch(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
