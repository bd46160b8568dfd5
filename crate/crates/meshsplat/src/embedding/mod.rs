//! Trainable surface embeddings `(k, u, v, d)`: evaluation to 3D, the
//! cross-triangle walking update, and the inverse solve from a 3D point.

mod io;
mod solve;
mod walk;

pub use io::{load_embeddings, read_embeddings, save_embeddings, write_embeddings};
pub use solve::{solve_embedding, SolveOptions, SolvedEmbedding};
pub use walk::{walk_on_triangles, WalkResult, WalkStatus, DEFAULT_MAX_HOPS, WALK_SLACK};

use nalgebra::{Point3, Vector3};

use crate::error::Result;
use crate::geometry::TriangleMesh;
use crate::scalar::{cast, Real};

/// A Gaussian's home on the mesh: triangle index, barycentric coordinates
/// inside it, and signed displacement along the interpolated normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embedding<T: Real> {
    pub k: usize,
    pub u: T,
    pub v: T,
    pub d: T,
}

impl<T: Real> Embedding<T> {
    pub fn new(k: usize, u: T, v: T, d: T) -> Self {
        Self { k, u, v, d }
    }

    /// Smallest barycentric weight; negative when outside the simplex.
    pub fn min_margin(&self) -> T {
        self.u.min(self.v).min(T::one() - self.u - self.v)
    }
}

/// An optimizer-produced update of the barycentric coordinates and the
/// displacement channel. Arbitrary finite magnitudes are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaryDelta<T: Real> {
    pub du: T,
    pub dv: T,
    pub dd: T,
}

impl<T: Real> BaryDelta<T> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.du.is_finite() && self.dv.is_finite() && self.dd.is_finite()
    }
}

/// Position of the embedding in 3D: `phong_point + d * phong_normal`.
pub fn embedded_position<T: Real>(mesh: &TriangleMesh<T>, e: &Embedding<T>) -> Result<Point3<T>> {
    let p = mesh.phong_point(e.k, e.u, e.v)?;
    let n = mesh.phong_normal(e.k, e.u, e.v)?;
    Ok(p + n * e.d)
}

/// Embedding evaluation together with its first derivatives.
pub struct EmbeddingJacobian<T: Real> {
    pub position: Point3<T>,
    /// Unit interpolated normal at (u, v).
    pub normal: Vector3<T>,
    /// d position / d u (includes the displacement term).
    pub du: Vector3<T>,
    /// d position / d v.
    pub dv: Vector3<T>,
}

/// Evaluates the embedding and the Jacobian of its position with respect to
/// `(u, v, d)`; the derivative w.r.t. `d` is the unit normal itself.
pub fn embedding_jacobian<T: Real>(
    mesh: &TriangleMesh<T>,
    e: &Embedding<T>,
) -> Result<EmbeddingJacobian<T>> {
    let p = mesh.phong_point(e.k, e.u, e.v)?;
    let raw = mesh.phong_normal_raw(e.k, e.u, e.v);
    let len = raw.norm();
    if len < cast(1e-12) {
        return Err(crate::error::Error::ZeroNormal(e.k));
    }
    let n = raw / len;
    let [v1, v2, v3] = mesh.face_vertices(e.k);
    let [n1, n2, n3] = mesh.face_vertex_normals(e.k);
    // d n_hat = (I - n n^T) dm / |m|
    let project = |dm: Vector3<T>| (dm - n * n.dot(&dm)) / len;
    let dn_du = project(n1 - n3);
    let dn_dv = project(n2 - n3);
    Ok(EmbeddingJacobian {
        position: p + n * e.d,
        normal: n,
        du: (v1 - v3) + dn_du * e.d,
        dv: (v2 - v3) + dn_dv * e.d,
    })
}

/// Clamps `(u, v)` into the barycentric simplex. Negative coordinates are
/// zeroed, then an overshoot past the hypotenuse is scaled back onto it.
/// Returns the clamped pair and whether any clamp was active.
pub fn clamp_to_simplex<T: Real>(u: T, v: T) -> (T, T, bool) {
    let mut cu = u.max(T::zero());
    let mut cv = v.max(T::zero());
    let mut active = cu != u || cv != v;
    let s = cu + cv;
    if s > T::one() {
        cu /= s;
        cv /= s;
        active = true;
    }
    (cu, cv, active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;
    use crate::geometry::TriangleMesh;
    use approx::assert_relative_eq;

    #[test]
    fn embedded_position_zero_displacement_is_phong_point() {
        let m = icosphere::<f64>(1);
        let e = Embedding::new(7, 0.3, 0.25, 0.0);
        let p = embedded_position(&m, &e).unwrap();
        assert_eq!(p, m.phong_point(7, 0.3, 0.25).unwrap());
    }

    #[test]
    fn embedded_position_flat_triangle_offsets_along_z() {
        let m = TriangleMesh::build(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let third = 1.0 / 3.0;
        let e = Embedding::new(0, third, third, 0.5);
        let p = embedded_position(&m, &e).unwrap();
        assert_relative_eq!(p, Point3::new(third, third, 0.5), epsilon = 1e-15);
    }

    #[test]
    fn embedded_position_sphere_radius_tracks_displacement() {
        let m = icosphere::<f64>(2);
        for (k, u, v) in [(3usize, 0.2, 0.3), (100, 0.5, 0.1), (250, 0.05, 0.9)] {
            let e = Embedding::new(k, u, v, 0.1);
            let p = embedded_position(&m, &e).unwrap();
            let surface = m.phong_point(k, u, v).unwrap().coords.norm();
            assert!((p.coords.norm() - (surface + 0.1)).abs() < 1e-2);
        }
    }

    #[test]
    fn embedding_jacobian_matches_finite_differences() {
        let m = icosphere::<f64>(1);
        let e = Embedding::new(11, 0.31, 0.24, 0.07);
        let jac = embedding_jacobian(&m, &e).unwrap();
        let h = 1e-6;
        let pos = |u: f64, v: f64, d: f64| {
            embedded_position(&m, &Embedding::new(e.k, u, v, d)).unwrap()
        };
        let fd_u = (pos(e.u + h, e.v, e.d) - pos(e.u - h, e.v, e.d)) / (2.0 * h);
        let fd_v = (pos(e.u, e.v + h, e.d) - pos(e.u, e.v - h, e.d)) / (2.0 * h);
        let fd_d = (pos(e.u, e.v, e.d + h) - pos(e.u, e.v, e.d - h)) / (2.0 * h);
        assert_relative_eq!(jac.du, fd_u, epsilon = 1e-8);
        assert_relative_eq!(jac.dv, fd_v, epsilon = 1e-8);
        assert_relative_eq!(jac.normal, fd_d, epsilon = 1e-8);
    }

    #[test]
    fn clamp_to_simplex_cases() {
        assert_eq!(clamp_to_simplex(0.2, 0.3), (0.2, 0.3, false));
        assert_eq!(clamp_to_simplex(-0.1, 0.3), (0.0, 0.3, true));
        let (u, v, active) = clamp_to_simplex(0.8, 0.8);
        assert!(active);
        assert_relative_eq!(u + v, 1.0, epsilon = 1e-15);
        assert_relative_eq!(u, 0.5, epsilon = 1e-15);
    }
}
