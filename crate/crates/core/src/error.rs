use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("bounding box is degenerate along axis {axis}")]
    DegenerateBbox { axis: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("point cloud frame {frame} is invalid: {reason}")]
    InvalidFrame { frame: usize, reason: String },
    #[error("space carving left no voxels: view {view} carved away everything that remained")]
    CarveEmpty { view: usize },
    #[error("space carving needs at least two views, got {0}")]
    CarveTooFewViews(usize),
    #[error("non-finite {tensor} at iteration {iteration}")]
    NonFinite { iteration: u64, tensor: &'static str },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("data is truncated")]
    Truncated,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
