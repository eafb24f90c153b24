use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate matrix: nearest rotation is not unique (singular values {0:?})")]
    DegenerateMatrix([f64; 3]),
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh is not watertight: parity votes disagree on {disagreeing} of {total} voxels")]
    NonWatertight { disagreeing: usize, total: usize },
    #[error("sample point {0:?} lacks 8 surrounding grid values")]
    OutOfBounds([f64; 3]),
    #[error("invalid grid resolution {0}")]
    InvalidResolution(usize),
    #[error("class {class} has {available} shapes, fewer than k_per_class = {required}")]
    InsufficientShapes {
        class: String,
        available: usize,
        required: usize,
    },
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("unknown exemplar index {0}")]
    UnknownExemplar(usize),
    #[error("mismatched lengths: {0} vs {1}")]
    MismatchedLengths(usize, usize),
    #[error("scale component {0} is too close to zero")]
    ZeroScale(f64),
    #[error("could not place object {object} after {attempts} attempts")]
    PlacementFailure { object: usize, attempts: usize },
    #[error("objective became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("both scenes rasterize to empty grids")]
    EmptyScenes,
    #[error("degenerate point configuration: covariance rank {0} < 2")]
    DegenerateConfiguration(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Deserializes JSON, naming the offending field in errors (`objects[2].R: ...`).
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &std::path::Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if field == "." {
            Error::format(path, inner.to_string())
        } else {
            Error::format(path, format!("{field}: {inner}"))
        }
    })
}
