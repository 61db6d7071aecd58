use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: w={w}, h={h} (extents must be strictly positive and finite)")]
    InvalidBox { w: f64, h: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: u16, num_classes: usize },

    #[error("no evaluable pixels")]
    NoEvaluablePixels,

    #[error("no visible ground-truth keypoints")]
    NoVisibleKeypoints,

    #[error("non-positive depth {value} at valid pixel {index}")]
    NonPositiveDepth { index: usize, value: f64 },

    #[error("no centers")]
    NoCenters,

    #[error("empty mask")]
    EmptyMask,

    #[error("grid too small: {height}x{width} has no neighbouring pixels")]
    GridTooSmall { height: usize, width: usize },

    #[error("empty feature set")]
    EmptyFeatureSet,

    #[error("cost matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("EMD requires equal sample counts (target {target}, source {source_len})")]
    UnequalSampleCounts { target: usize, source_len: usize },

    #[error("undefined gain: baseline metric is zero")]
    UndefinedGain,

    #[error("metric mismatch: {0}")]
    MetricMismatch(String),

    #[error("no records match filter {0}")]
    EmptyFilter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("missing distance for target {target_id} / source {source_id}")]
    MissingPair {
        target_id: String,
        source_id: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown dataset id {0:?}")]
    UnknownDataset(String),

    #[error("unknown domain id {0:?}")]
    UnknownDomain(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },

    #[error("truncated payload at offset {offset}")]
    Truncated { offset: usize },

    #[error("dimension mismatch vs sidecar: file has {file}, sidecar says {sidecar}")]
    SidecarMismatch { file: String, sidecar: String },

    #[error("schema version mismatch: found {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("no records")]
    NoRecords,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn stage(stage: &'static str, err: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(err),
        }
    }
}
