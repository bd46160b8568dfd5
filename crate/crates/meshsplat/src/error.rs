//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate face {0} (area below epsilon)")]
    DegenerateFace(usize),
    #[error("non-manifold or inconsistently wound edge ({0}, {1}): shared by more than two faces or duplicated winding")]
    NonManifoldEdge(usize, usize),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid face index {0}")]
    InvalidFace(usize),
    #[error("barycentric coordinates out of range: u={u}, v={v}")]
    BarycentricOutOfRange { u: f64, v: f64 },
    #[error("interpolated normal has near-zero length at face {0}")]
    ZeroNormal(usize),
    #[error("non-finite barycentric delta")]
    NonFiniteDelta,
    #[error("meshes do not share topology: {0}")]
    TopologyMismatch(String),
    #[error("camera point behind near plane (depth {0})")]
    BehindCamera(f64),
    #[error("non-finite gradient for gaussian {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite parameter in group {0}")]
    NonFiniteParam(&'static str),
    #[error("image shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("embedding/mesh checksum mismatch: expected {expected:#018x}, got {got:#018x}")]
    ChecksumMismatch { expected: u64, got: u64 },
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
