use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid sample grid: {0}")]
    InvalidGrid(String),
    #[error("basis count {requested} out of range 1..={available}")]
    BasisCount { requested: usize, available: usize },
    #[error("singular value decomposition did not converge")]
    SvdNoConvergence,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("quadtree part {part} holds {count} samples but only {capacity} cells are available")]
    AtlasOverflow { part: usize, count: usize, capacity: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid cubemap: {0}")]
    InvalidCubemap(String),
    #[error("ambient light requires precomputed visibility")]
    MissingVisibility,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid light: {0}")]
    InvalidLight(String),
    #[error("scene mismatch: {0}")]
    SceneMismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;
