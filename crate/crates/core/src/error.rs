use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // silhouette
    #[error("frame has no foreground pixels")]
    AllBackground,
    #[error("invalid normalization target {h}x{w}: height must be divisible by 3 and both dimensions >= 9")]
    BadTarget { h: usize, w: usize },
    #[error("invalid frame: {0}")]
    BadFrame(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    // descriptors and clustering
    #[error("duplicate subject id {0:?}")]
    DuplicateId(String),
    #[error("invalid cluster count K={k} for {n} points")]
    BadK { k: usize, n: usize },
    #[error("subject {0:?} has no cluster assignment")]
    UnassignedId(String),
    #[error("invalid kappa={kappa} for K={k}")]
    BadKappa { kappa: usize, k: usize },
    #[error("cluster id {id} out of range for K={k}")]
    BadClusterId { id: usize, k: usize },

    // network
    #[error("layer {layer} output underflows: {detail}")]
    ShapeUnderflow { layer: &'static str, detail: String },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("training pairs carry only label {0}")]
    DegeneratePairs(u8),
    #[error("invalid training configuration: {0}")]
    BadTrainConfig(String),

    // datasets
    #[error("no frames found under {0}")]
    EmptyDataset(PathBuf),
    #[error("layout mismatch at {path}: {detail}")]
    LayoutMismatch { path: PathBuf, detail: String },
    #[error("not enough frames to form {0}")]
    InsufficientFrames(String),
    #[error("need at least 2 subjects for negative pairs, found {0}")]
    InsufficientSubjects(usize),
    #[error("split policy infeasible: {0}")]
    PolicyInfeasible(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),

    // matching and evaluation
    #[error("probe sequence is empty")]
    EmptyProbe,
    #[error("ground-truth id {0:?} is not in the gallery")]
    UnknownGroundTruth(String),

    // serialization
    #[error("bad {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    RawIo(#[from] std::io::Error),
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }
}
