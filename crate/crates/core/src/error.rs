use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient constraints: need at least {needed} distinct piste lines, got {got}")]
    InsufficientConstraints { needed: usize, got: usize },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("point maps to infinity (homogeneous w = {0:e})")]
    PointAtInfinity(f64),

    #[error("vertical ray at x = {0} does not intersect the {1} piste border")]
    NoIntersection(f64, &'static str),

    #[error("not enough points for k-means: {points} points, k = {k}")]
    TooFewPoints { points: usize, k: usize },

    #[error("every training point fell into an excluded stage-1 cluster")]
    AllPointsExcluded,

    #[error("cluster {0} has no indexed clips")]
    EmptyCluster(usize),

    #[error("action id {id} out of range for {count} actions")]
    InvalidAction { id: usize, count: usize },

    #[error("missing annotation: {0}")]
    MissingAnnotation(String),

    #[error("simulation already terminated with status {0}")]
    Terminated(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{policy} policy cannot be driven by run_touch")]
    UnsupportedPolicy { policy: &'static str },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(
        "incompatible file: expected {expected} (schema {expected_version}), found {found} (schema {found_version})"
    )]
    IncompatibleVersion {
        expected: &'static str,
        expected_version: u32,
        found: String,
        found_version: u32,
    },

    #[error("content hash mismatch: recorded {recorded}, computed {computed}")]
    HashMismatch { recorded: String, computed: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::InvalidAction { .. } => "invalid-input",
            Error::InsufficientConstraints { .. }
            | Error::SingularSystem(_)
            | Error::PointAtInfinity(_)
            | Error::NoIntersection(..) => "geometry",
            Error::TooFewPoints { .. } | Error::AllPointsExcluded | Error::EmptyCluster(_) => "clustering",
            Error::MissingAnnotation(_) => "annotation",
            Error::Terminated(_) | Error::UnsupportedPolicy { .. } => "simulation",
            Error::Config(_) => "config",
            Error::Parse { .. } | Error::Json(_) => "parse",
            Error::Validation(_) => "validation",
            Error::IncompatibleVersion { .. } | Error::HashMismatch { .. } => "model-file",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
