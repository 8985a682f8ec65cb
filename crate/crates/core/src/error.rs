use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the registration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: byte offset {offset}: {message}")]
    BinaryParse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),

    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },

    #[error("label `{label}` references vertex {index} but the mesh has {vertex_count} vertices")]
    LabelOutOfRange {
        label: String,
        index: usize,
        vertex_count: usize,
    },

    #[error("no valid normals: every face is degenerate")]
    NoValidNormals,

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("rank-deficient alignment: fewer than 3 non-collinear source vertices")]
    RankDeficient,

    #[error("mesh has no edges")]
    NoEdges,

    #[error("no valid correspondences")]
    NoValidCorrespondences,

    #[error("singular system (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("corpus has {found} meshes but {required} are required")]
    CorpusTooSmall { found: usize, required: usize },

    #[error("undefined Hausdorff distance: empty point set")]
    EmptyPointSet,

    #[error("invalid starting point: objective is not finite at x0")]
    InvalidStartingPoint,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("nothing to register: every input channel is empty")]
    NothingToRegister,

    #[error("frame id mismatch: {0}")]
    FrameMismatch(String),

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
