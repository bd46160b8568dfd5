//! Gaussian splatting embedded on deformable triangle meshes.
//!
//! Gaussians live at trainable barycentric embeddings `(k, u, v, d)` on a
//! canonical triangle mesh, are carried into posed space by mesh deformation
//! (per-triangle rotations, area-weighted vertex quaternions, area-ratio
//! scaling), rendered by a differentiable CPU splatting rasterizer, and
//! fitted to images by lifted optimization with cross-triangle walking
//! updates.
//!
//! All numerical code is generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the aliases below pin the common concrete choices.

pub mod deformation;
pub mod embedding;
pub mod gaussians;
pub mod gradcheck;
pub mod img;
pub mod io;
pub mod model;
pub mod rasterizer;
pub mod trainer;
pub mod error;
pub mod geometry;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete aliases for the two supported scalar types.
pub type Mesh32 = geometry::TriangleMesh<f32>;
pub type Mesh64 = geometry::TriangleMesh<f64>;
