use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid NIfTI file: {0}")]
    InvalidNifti(String),
    #[error("unsupported NIfTI datatype code {0} (accepted: 2, 4, 16, 64)")]
    UnsupportedDatatype(i16),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geometry mismatch between {0} and {1}")]
    GeometryMismatch(&'static str, &'static str),
    #[error("transform is singular (|det| = {0:e})")]
    SingularTransform(f64),
    #[error("insufficient overlap: {valid} of {total} samples map inside the moving image")]
    InsufficientOverlap { valid: usize, total: usize },
    #[error("non-finite value at voxel {index:?}")]
    NonFinite { index: [usize; 3] },
    #[error("non-finite metric value")]
    NonFiniteMetric,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask is full")]
    FullMask,
    #[error("level set has no zero crossing")]
    NoZeroCrossing,
    #[error("voxel {0:?} is not strictly interior")]
    BoundaryVoxel([usize; 3]),
    #[error("edge scale resolved to {0}; set an explicit edge_scale for this image")]
    DegenerateEdgeScale(f64),
    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
