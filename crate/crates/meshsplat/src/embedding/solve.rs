//! Inverse embedding solve: from a 3D point to a local minimizer of
//! `|V(k,u,v) + d*N(k,u,v) - p|^2`, refined by damped Gauss-Newton with
//! barycentric steps routed through the triangle walk.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::Result;
use crate::geometry::TriangleMesh;
use crate::scalar::{cast, Real};

use super::walk::walk_on_triangles;
use super::{embedding_jacobian, Embedding};

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<T: Real> {
    /// Gauss-Newton iteration budget.
    pub max_iters: usize,
    /// Displacement clamp; `None` derives 10x the mean edge length.
    pub d_max: Option<T>,
    /// Residual below which the solve is declared converged; `None` derives
    /// 1e-10x the mean edge length.
    pub tol: Option<T>,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            max_iters: 50,
            d_max: None,
            tol: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolvedEmbedding<T: Real> {
    pub embedding: Embedding<T>,
    /// Euclidean distance between the embedded position and the target.
    pub residual: T,
    /// False when the iteration budget ran out before reaching tolerance.
    pub converged: bool,
}

/// Solves for the embedding closest to `point`, starting from `hint` when
/// given (densify-split case) or from the nearest face otherwise.
pub fn solve_embedding<T: Real>(
    mesh: &TriangleMesh<T>,
    point: Point3<T>,
    hint: Option<Embedding<T>>,
    options: SolveOptions<T>,
) -> Result<SolvedEmbedding<T>> {
    let mean_edge = mesh.mean_edge_length();
    let d_max = options.d_max.unwrap_or(cast::<T>(10.0) * mean_edge);
    let tol = options.tol.unwrap_or(cast::<T>(1e-10) * mean_edge);

    let mut state = match hint {
        Some(h) => refresh_displacement(mesh, h, point, d_max)?,
        None => nearest_face_projection(mesh, point, d_max)?,
    };
    let mut residual = residual_norm(mesh, &state, point)?;

    let mut lambda = cast::<T>(1e-10);
    let mut converged = residual <= tol;
    for _ in 0..options.max_iters {
        if residual <= tol {
            converged = true;
            break;
        }
        let jac = embedding_jacobian(mesh, &state)?;
        let r = jac.position - point;
        let j = Matrix3::from_columns(&[jac.du, jac.dv, jac.normal]);
        let jtj = j.transpose() * j;
        let jtr = j.transpose() * r;

        let mut improved = false;
        for _ in 0..12 {
            let damped = jtj + Matrix3::identity() * lambda;
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= cast::<T>(10.0);
                continue;
            };
            match apply_step(mesh, &state, step, d_max) {
                Ok(candidate) => {
                    let cand_res = residual_norm(mesh, &candidate, point)?;
                    if cand_res < residual {
                        state = candidate;
                        residual = cand_res;
                        lambda = (lambda * cast::<T>(0.3)).max(cast::<T>(1e-12));
                        improved = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            lambda *= cast::<T>(10.0);
        }
        if !improved {
            // Local minimum at the damping limit.
            converged = true;
            break;
        }
    }
    if residual <= tol {
        converged = true;
    }

    Ok(SolvedEmbedding {
        embedding: state,
        residual,
        converged,
    })
}

fn apply_step<T: Real>(
    mesh: &TriangleMesh<T>,
    state: &Embedding<T>,
    step: Vector3<T>,
    d_max: T,
) -> Result<Embedding<T>> {
    let walked = walk_on_triangles(mesh, state.k, state.u, state.v, step.x, step.y)?;
    let d = (state.d + step.z).clamp(-d_max, d_max);
    Ok(Embedding::new(walked.k, walked.u, walked.v, d))
}

fn residual_norm<T: Real>(
    mesh: &TriangleMesh<T>,
    e: &Embedding<T>,
    point: Point3<T>,
) -> Result<T> {
    Ok((super::embedded_position(mesh, e)? - point).norm())
}

fn refresh_displacement<T: Real>(
    mesh: &TriangleMesh<T>,
    hint: Embedding<T>,
    point: Point3<T>,
    d_max: T,
) -> Result<Embedding<T>> {
    let n = mesh.phong_normal(hint.k, hint.u, hint.v)?;
    let p = mesh.phong_point(hint.k, hint.u, hint.v)?;
    let d = n.dot(&(point - p)).clamp(-d_max, d_max);
    Ok(Embedding::new(hint.k, hint.u, hint.v, d))
}

/// Naive initialization: closest point over all faces, displacement along
/// the interpolated normal there.
fn nearest_face_projection<T: Real>(
    mesh: &TriangleMesh<T>,
    point: Point3<T>,
    d_max: T,
) -> Result<Embedding<T>> {
    let mut best: Option<(T, Embedding<T>)> = None;
    for k in 0..mesh.num_faces() {
        let [a, b, c] = mesh.face_vertices(k);
        let (u, v) = closest_point_barycentric(point, a, b, c);
        let cand = refresh_displacement(mesh, Embedding::new(k, u, v, T::zero()), point, d_max)?;
        let res = residual_norm(mesh, &cand, point)?;
        if best.map_or(true, |(b_res, _)| res < b_res) {
            best = Some((res, cand));
        }
    }
    Ok(best.expect("mesh has at least one face").1)
}

/// Barycentric coordinates (weights of a and b) of the point of triangle
/// abc closest to p. Region analysis after Ericson, "Real-Time Collision
/// Detection".
fn closest_point_barycentric<T: Real>(
    p: Point3<T>,
    a: Point3<T>,
    b: Point3<T>,
    c: Point3<T>,
) -> (T, T) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= T::zero() && d2 <= T::zero() {
        return (T::one(), T::zero()); // vertex a
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= T::zero() && d4 <= d3 {
        return (T::zero(), T::one()); // vertex b
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        let t = d1 / (d1 - d3); // edge ab
        return (T::one() - t, t);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= T::zero() && d5 <= d6 {
        return (T::zero(), T::zero()); // vertex c
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        let t = d2 / (d2 - d6); // edge ac
        return (T::one() - t, T::zero());
    }
    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6)); // edge bc
        return (T::zero(), T::one() - t);
    }
    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    // weights: a gets 1-v-w, b gets v, c gets w; our chart is (u_a, u_b).
    (T::one() - v - w, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::embedded_position;
    use crate::geometry::primitives::{icosphere, plane_grid};
    use rand::{Rng, SeedableRng};

    #[test]
    fn closest_point_regions() {
        let a = Point3::<f64>::new(0.0, 0.0, 0.0);
        let b = Point3::<f64>::new(1.0, 0.0, 0.0);
        let c = Point3::<f64>::new(0.0, 1.0, 0.0);
        // interior
        let (u, v) = closest_point_barycentric(Point3::new(0.2, 0.3, 5.0), a, b, c);
        assert!((u - 0.5).abs() < 1e-12 && (v - 0.2).abs() < 1e-12);
        // vertex region
        let (u, v) = closest_point_barycentric(Point3::new(-1.0, -1.0, 0.0), a, b, c);
        assert_eq!((u, v), (1.0, 0.0));
        // edge ab region (chart weight of b is v)
        let (u, v) = closest_point_barycentric(Point3::new(0.5, -1.0, 0.0), a, b, c);
        assert!((u - 0.5).abs() < 1e-12 && (v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn round_trip_recovers_embedding() {
        let mesh = icosphere::<f64>(2);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = rng.random_range(0..mesh.num_faces());
            let u = rng.random_range(0.05..0.6);
            let v = rng.random_range(0.05..(0.9 - u));
            let d = rng.random_range(-0.05..0.05);
            let e = Embedding::new(k, u, v, d);
            let p = embedded_position(&mesh, &e).unwrap();
            let solved = solve_embedding(&mesh, p, None, SolveOptions::default()).unwrap();
            assert!(
                solved.residual < 1e-8,
                "residual {} for {e:?}",
                solved.residual
            );
        }
    }

    #[test]
    fn hint_accelerates_split_case() {
        let mesh = icosphere::<f64>(2);
        let e = Embedding::new(40, 0.3, 0.3, 0.02);
        let p = embedded_position(&mesh, &e).unwrap();
        let nudged = Point3::from(p.coords + Vector3::new(0.01, -0.008, 0.012));
        let solved = solve_embedding(&mesh, nudged, Some(e), SolveOptions::default()).unwrap();
        assert!(solved.residual < 1e-8, "residual {}", solved.residual);
    }

    #[test]
    fn on_surface_vertex_point() {
        let mesh = plane_grid::<f64>(2);
        let target = mesh.vertices()[4]; // interior vertex
        let solved = solve_embedding(&mesh, target, None, SolveOptions::default()).unwrap();
        assert!(solved.residual < 1e-10);
        assert!(solved.embedding.d.abs() < 1e-10);
        let p = embedded_position(&mesh, &solved.embedding).unwrap();
        assert!((p - target).norm() < 1e-10);
    }

    #[test]
    fn flat_plane_recovers_height() {
        let mesh = plane_grid::<f64>(2);
        let p = Point3::new(0.7, 1.3, 0.25);
        let solved = solve_embedding(&mesh, p, None, SolveOptions::default()).unwrap();
        assert!((solved.embedding.d - 0.25).abs() < 1e-9);
        assert!(solved.residual < 1e-9);
        assert!(solved.converged);
    }

    #[test]
    fn residual_not_worse_than_naive_projection() {
        let mesh = icosphere::<f64>(1);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(23);
        for _ in 0..30 {
            let p = Point3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            );
            let naive = nearest_face_projection(&mesh, p, 10.0).unwrap();
            let naive_res = residual_norm(&mesh, &naive, p).unwrap();
            let solved = solve_embedding(&mesh, p, None, SolveOptions::default()).unwrap();
            assert!(solved.residual <= naive_res + 1e-12);
        }
    }
}
