use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid camera {camera_id}: {reason}")]
    InvalidCamera { camera_id: u32, reason: String },

    #[error("invalid box (camera {camera_id}, instance {instance_id}): {reason}")]
    InvalidBox {
        camera_id: u32,
        instance_id: i64,
        reason: String,
    },

    #[error("duplicate instance id {instance_id} in view of camera {camera_id}")]
    DuplicateInstance { camera_id: u32, instance_id: i64 },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("embedding sidecar: {0}")]
    Sidecar(String),

    #[error("embedding for camera {camera_id}, instance {instance_id} does not match any scene instance")]
    DanglingEmbedding { camera_id: u32, instance_id: i64 },

    #[error("missing embedding for camera {camera_id}, instance {instance_id}")]
    MissingEmbedding { camera_id: u32, instance_id: i64 },

    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("zero baseline between cameras {0} and {1}")]
    ZeroBaseline(u32, u32),

    #[error("pixel is at the epipole; epipolar line is undefined")]
    EpipoleDegeneracy,

    #[error("plane map for camera {0} is numerically singular")]
    DegeneratePlane(u32),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("negative histogram component {0}")]
    NegativeComponent(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty image patch")]
    EmptyPatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("k = {k} exceeds the number of distinct descriptors ({distinct})")]
    TooFewDescriptors { k: usize, distinct: usize },

    #[error("no positive pairs")]
    NoPositives,

    #[error("no negative pairs")]
    NoNegatives,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("infeasible simulator config: {0}")]
    InfeasibleConfig(String),

    #[error("ground-truth mismatch: {0}")]
    GroundTruthMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
