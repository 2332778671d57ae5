use std::path::PathBuf;

use thiserror::Error;

use crate::volume::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0}: every extent must be at least 1")]
    InvalidShape(Shape),

    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(Shape, Shape),

    #[error("buffer holds {actual} voxels, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid voxel at {at:?}: {reason}")]
    InvalidVoxel { at: [usize; 3], reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("region {origin:?}+{shape} lies outside volume {volume}")]
    RegionOutOfBounds {
        origin: [usize; 3],
        shape: Shape,
        volume: Shape,
    },

    #[error("dtype mismatch: store holds {found}, requested {expected}")]
    DtypeMismatch { expected: &'static str, found: String },

    #[error("checksum mismatch in chunk {0}")]
    ChecksumMismatch(String),

    #[error("missing chunk file {}", .0.display())]
    MissingChunk(PathBuf),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("SWC line {line}: {reason}")]
    Swc { line: usize, reason: String },

    #[error("skeleton node {id} at {position:?} um falls outside the grid")]
    NodeOutOfGrid { id: i64, position: [f64; 3] },

    #[error("both volumes are empty; the Jaccard index is undefined")]
    EmptyJaccard,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
