//! Triangle mesh container with adjacency, per-face frames, and the
//! barycentric position/normal interpolation used by all surface embeddings.

mod obj;
pub mod primitives;

pub use obj::{load_obj, parse_obj, write_obj};

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};

/// Slack for barycentric range checks.
pub const BARY_SLACK: f64 = 1e-9;
/// Default minimum face area.
pub const EPS_AREA: f64 = 1e-12;

/// A point on the interpolated surface: position plus unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint<T: Real> {
    pub position: Point3<T>,
    pub normal: Vector3<T>,
}

/// Indexed triangle mesh, immutable after construction.
///
/// All derived quantities (areas, frames, vertex normals, edge adjacency)
/// are computed once in [`TriangleMesh::build`] and never mutated, so the
/// mesh is safe to share across worker threads.
#[derive(Debug, Clone)]
pub struct TriangleMesh<T: Real> {
    vertices: Vec<Point3<T>>,
    faces: Vec<[usize; 3]>,
    vertex_normals: Vec<Vector3<T>>,
    face_normals: Vec<Vector3<T>>,
    face_areas: Vec<T>,
    /// Per face, per local edge `e` (connecting corners `e` and `(e+1)%3`):
    /// the neighboring `(face, local edge)` or `None` on a boundary.
    edge_adjacency: Vec<[Option<(usize, u8)>; 3]>,
    /// Per-face orthonormal basis: columns are tangent (first edge),
    /// bitangent (normal x tangent), and face normal.
    face_frames: Vec<Matrix3<T>>,
    checksum: u64,
}

impl<T: Real> TriangleMesh<T> {
    pub fn build(vertices: Vec<Point3<T>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        Self::build_with_epsilon(vertices, faces, cast(EPS_AREA))
    }

    pub fn build_with_epsilon(
        vertices: Vec<Point3<T>>,
        faces: Vec<[usize; 3]>,
        eps_area: T,
    ) -> Result<Self> {
        let nv = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= nv {
                    return Err(Error::IndexOutOfRange(format!(
                        "face {fi} references vertex {i} of {nv}"
                    )));
                }
            }
        }

        let half = cast::<T>(0.5);
        let mut face_normals = Vec::with_capacity(faces.len());
        let mut face_areas = Vec::with_capacity(faces.len());
        let mut face_frames = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let [a, b, c] = corners(&vertices, f);
            let e0 = b - a;
            let cross = e0.cross(&(c - a));
            let norm2 = cross.norm();
            let area = half * norm2;
            if area <= eps_area {
                return Err(Error::DegenerateFace(fi));
            }
            let n = cross / norm2;
            let t = e0.normalize();
            let bt = n.cross(&t);
            face_normals.push(n);
            face_areas.push(area);
            face_frames.push(Matrix3::from_columns(&[t, bt, n]));
        }

        // Directed-edge map; a repeated directed edge means either >2 faces on
        // an undirected edge or inconsistent winding, both rejected.
        let mut directed: std::collections::HashMap<(usize, usize), (usize, u8)> =
            std::collections::HashMap::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for e in 0..3u8 {
                let a = f[e as usize];
                let b = f[(e as usize + 1) % 3];
                if directed.insert((a, b), (fi, e)).is_some() {
                    return Err(Error::NonManifoldEdge(a, b));
                }
            }
        }
        let mut edge_adjacency = vec![[None; 3]; faces.len()];
        for (fi, f) in faces.iter().enumerate() {
            for e in 0..3u8 {
                let a = f[e as usize];
                let b = f[(e as usize + 1) % 3];
                edge_adjacency[fi][e as usize] = directed.get(&(b, a)).copied();
            }
        }

        // Area-weighted vertex normals: raw cross products already carry the
        // 2*area weight. Deterministic in face order.
        let mut accum = vec![Vector3::<T>::zeros(); nv];
        let mut first_face = vec![usize::MAX; nv];
        for (fi, f) in faces.iter().enumerate() {
            let w = face_normals[fi] * (face_areas[fi] + face_areas[fi]);
            for &vi in f {
                accum[vi] += w;
                if first_face[vi] == usize::MAX {
                    first_face[vi] = fi;
                }
            }
        }
        let tiny = cast::<T>(1e-12);
        let vertex_normals = accum
            .into_iter()
            .enumerate()
            .map(|(vi, n)| {
                let len = n.norm();
                if len > tiny {
                    n / len
                } else if first_face[vi] != usize::MAX {
                    face_normals[first_face[vi]]
                } else {
                    Vector3::z()
                }
            })
            .collect();

        let checksum = face_checksum(&faces);
        Ok(Self {
            vertices,
            faces,
            vertex_normals,
            face_normals,
            face_areas,
            edge_adjacency,
            face_frames,
            checksum,
        })
    }

    /// New mesh with mapped vertex positions and identical topology.
    pub fn with_vertices(&self, vertices: Vec<Point3<T>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::TopologyMismatch(format!(
                "vertex count {} != {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Self::build(vertices, self.faces.clone())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_normals(&self) -> &[Vector3<T>] {
        &self.vertex_normals
    }

    pub fn face_normal(&self, k: usize) -> Vector3<T> {
        self.face_normals[k]
    }

    pub fn face_area(&self, k: usize) -> T {
        self.face_areas[k]
    }

    pub fn face_areas(&self) -> &[T] {
        &self.face_areas
    }

    /// FNV-1a 64 over the face index buffer; detects mesh/embedding mismatch.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn adjacent(&self, k: usize, edge: u8) -> Option<(usize, u8)> {
        self.edge_adjacency[k][edge as usize]
    }

    fn check_face(&self, k: usize) -> Result<()> {
        if k < self.faces.len() {
            Ok(())
        } else {
            Err(Error::InvalidFace(k))
        }
    }

    fn check_bary(&self, u: T, v: T) -> Result<()> {
        let slack = cast::<T>(BARY_SLACK);
        if u < -slack || v < -slack || u + v > T::one() + slack {
            return Err(Error::BarycentricOutOfRange {
                u: crate::scalar::to_f64(u),
                v: crate::scalar::to_f64(v),
            });
        }
        Ok(())
    }

    pub fn face_vertices(&self, k: usize) -> [Point3<T>; 3] {
        corners(&self.vertices, &self.faces[k])
    }

    pub fn face_vertex_normals(&self, k: usize) -> [Vector3<T>; 3] {
        let f = &self.faces[k];
        [
            self.vertex_normals[f[0]],
            self.vertex_normals[f[1]],
            self.vertex_normals[f[2]],
        ]
    }

    /// Barycentric position: `u*V1 + v*V2 + (1-u-v)*V3`.
    pub fn phong_point(&self, k: usize, u: T, v: T) -> Result<Point3<T>> {
        self.check_face(k)?;
        self.check_bary(u, v)?;
        Ok(self.phong_point_unchecked(k, u, v))
    }

    #[inline]
    pub fn phong_point_unchecked(&self, k: usize, u: T, v: T) -> Point3<T> {
        let [a, b, c] = self.face_vertices(k);
        let w = T::one() - u - v;
        Point3::from(a.coords * u + b.coords * v + c.coords * w)
    }

    /// Barycentric-interpolated vertex normal, normalized to unit length.
    pub fn phong_normal(&self, k: usize, u: T, v: T) -> Result<Vector3<T>> {
        self.check_face(k)?;
        self.check_bary(u, v)?;
        let raw = self.phong_normal_raw(k, u, v);
        let len = raw.norm();
        if len < cast(1e-12) {
            return Err(Error::ZeroNormal(k));
        }
        Ok(raw / len)
    }

    /// Interpolated normal before normalization.
    #[inline]
    pub fn phong_normal_raw(&self, k: usize, u: T, v: T) -> Vector3<T> {
        let [na, nb, nc] = self.face_vertex_normals(k);
        let w = T::one() - u - v;
        na * u + nb * v + nc * w
    }

    /// Position and unit normal in one call.
    pub fn surface_point(&self, k: usize, u: T, v: T) -> Result<SurfacePoint<T>> {
        Ok(SurfacePoint {
            position: self.phong_point(k, u, v)?,
            normal: self.phong_normal(k, u, v)?,
        })
    }

    /// Per-face orthonormal frame: columns tangent, bitangent, normal.
    pub fn triangle_frame(&self, k: usize) -> Result<Matrix3<T>> {
        self.check_face(k)?;
        Ok(self.face_frames[k])
    }

    pub fn mean_edge_length(&self) -> T {
        let mut sum = T::zero();
        let mut count = 0usize;
        for f in &self.faces {
            let [a, b, c] = corners(&self.vertices, f);
            sum += (b - a).norm() + (c - b).norm() + (a - c).norm();
            count += 3;
        }
        if count == 0 {
            T::zero()
        } else {
            sum / cast(count as f64)
        }
    }

    /// Radius of the bounding sphere centered at the vertex centroid.
    pub fn bounding_radius(&self) -> T {
        if self.vertices.is_empty() {
            return T::zero();
        }
        let mut center = Vector3::<T>::zeros();
        for p in &self.vertices {
            center += p.coords;
        }
        center /= cast::<T>(self.vertices.len() as f64);
        let mut r = T::zero();
        for p in &self.vertices {
            r = r.max((p.coords - center).norm());
        }
        r
    }

    /// Cumulative face-area table for area-proportional sampling.
    pub fn cumulative_areas(&self) -> Vec<T> {
        let mut acc = Vec::with_capacity(self.face_areas.len() + 1);
        let mut sum = T::zero();
        acc.push(sum);
        for &a in &self.face_areas {
            sum += a;
            acc.push(sum);
        }
        acc
    }
}

#[inline]
fn corners<T: Real>(vertices: &[Point3<T>], f: &[usize; 3]) -> [Point3<T>; 3] {
    [vertices[f[0]], vertices[f[1]], vertices[f[2]]]
}

/// FNV-1a 64-bit over the face indices, each taken as 8 little-endian bytes.
pub fn face_checksum(faces: &[[usize; 3]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for f in faces {
        for &i in f {
            for byte in (i as u64).to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(PRIME);
            }
        }
    }
    h
}
