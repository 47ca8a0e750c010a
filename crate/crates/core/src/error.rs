use std::path::PathBuf;

use crate::scene::{TargetId, Violation};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid direction: pan {pan}, tilt {tilt}")]
    InvalidDirection { pan: f64, tilt: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("unknown target id {0}")]
    UnknownTarget(TargetId),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid label {label} for person {person}: {reason}")]
    InvalidLabel {
        person: TargetId,
        label: TargetId,
        reason: &'static str,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid transition table: {0}")]
    InvalidTable(String),

    #[error("distribution over labels of target {target} sums to {sum}")]
    Unnormalized { target: TargetId, sum: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("recording failed validation ({} violations): {}", .0.len(), first_violation(.0))]
    InvalidRecording(Vec<Violation>),

    #[error("frame {frame}: VFOA of person {person} is not annotated")]
    NotAnnotated { frame: usize, person: TargetId },

    #[error("EM iteration {iteration}: {source}")]
    EStep {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Metric(String),

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {} problems:\n{}", .problems.len(), .problems.join("\n"))]
    InvalidFile {
        path: PathBuf,
        problems: Vec<String>,
    },

    #[error("{path}: missing field `{field}`")]
    MissingField { path: PathBuf, field: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|x| x.to_string()).unwrap_or_default()
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
