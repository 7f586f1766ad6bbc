use std::path::PathBuf;

/// Errors surfaced by loaders, the pipeline and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid pose for keyframe {id}: {msg}")]
    InvalidPose { id: u64, msg: String },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("keyframe count mismatch: trajectory has {poses} poses but {images} images were found")]
    KeyframeCountMismatch { poses: usize, images: usize },

    #[error(
        "pose-correction system is rank deficient (global-motion gauge): \
         lambda2 = 0 leaves a {null_dim}-dimensional nullspace over {fragments} fragments; \
         set lambda2 > 0 to fix the gauge"
    )]
    GaugeDeficient { fragments: usize, null_dim: usize },

    #[error("match references fragment {fragment} which is not indexed in the system")]
    UnknownFragment { fragment: usize },

    #[error("chart for fragment {fragment} is {w}x{h} px which exceeds the maximum atlas side {max_side}")]
    ChartTooLarge {
        fragment: usize,
        w: u32,
        h: u32,
        max_side: u32,
    },

    #[error("scene generation failed: {0}")]
    SceneGeneration(String),

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
