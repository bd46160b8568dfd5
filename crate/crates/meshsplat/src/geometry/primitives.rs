//! Procedural meshes used by the synthetic scenes and the test suite.

use nalgebra::Point3;
use std::collections::HashMap;

use crate::scalar::{cast, Real};

use super::TriangleMesh;

/// Icosphere of the given subdivision level, radius 1, centered at origin.
/// Level 0 is the icosahedron (20 faces); each level quadruples the faces.
pub fn icosphere<T: Real>(level: u32) -> TriangleMesh<T> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    for v in &mut verts {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v[0] /= n;
        v[1] /= n;
        v[2] /= n;
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mids: Vec<usize> = (0..3)
                .map(|e| {
                    let a = f[e];
                    let b = f[(e + 1) % 3];
                    let key = (a.min(b), a.max(b));
                    *midpoint.entry(key).or_insert_with(|| {
                        let pa = verts[a];
                        let pb = verts[b];
                        let mut m = [
                            (pa[0] + pb[0]) / 2.0,
                            (pa[1] + pb[1]) / 2.0,
                            (pa[2] + pb[2]) / 2.0,
                        ];
                        let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                        m[0] /= n;
                        m[1] /= n;
                        m[2] /= n;
                        verts.push(m);
                        verts.len() - 1
                    })
                })
                .collect();
            let [m01, m12, m20] = [mids[0], mids[1], mids[2]];
            next.push([f[0], m01, m20]);
            next.push([f[1], m12, m01]);
            next.push([f[2], m20, m12]);
            next.push([m01, m12, m20]);
        }
        faces = next;
    }

    let vertices = verts
        .into_iter()
        .map(|v| Point3::new(cast(v[0]), cast(v[1]), cast(v[2])))
        .collect();
    TriangleMesh::build(vertices, faces).expect("icosphere is a valid manifold")
}

/// `n x n` grid of unit squares in the z=0 plane, each split along the
/// anti-diagonal into two right triangles.
///
/// The lower-left triangle of cell (i, j) carries the tuple
/// `((i+1,j), (i,j+1), (i,j))` so its barycentric chart coincides with the
/// xy offset inside the cell; its face index is `2*(j*n + i)`, the
/// upper-right triangle is the next index.
pub fn plane_grid<T: Real>(n: usize) -> TriangleMesh<T> {
    assert!(n >= 1);
    let stride = n + 1;
    let vid = |i: usize, j: usize| j * stride + i;
    let mut vertices = Vec::with_capacity(stride * stride);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Point3::new(cast(i as f64), cast(j as f64), T::zero()));
        }
    }
    let mut faces = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            faces.push([vid(i + 1, j), vid(i, j + 1), vid(i, j)]);
            faces.push([vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)]);
        }
    }
    TriangleMesh::build(vertices, faces).expect("plane grid is a valid manifold")
}

/// Open cylinder around the z axis: `n_around` segments, `n_height` stacks,
/// radius `r`, height `h` starting at z=0. The cap rings stay open, so the
/// mesh has boundary edges.
pub fn cylinder<T: Real>(n_around: usize, n_height: usize, r: f64, h: f64) -> TriangleMesh<T> {
    assert!(n_around >= 3 && n_height >= 1);
    let vid = |i: usize, j: usize| j * n_around + (i % n_around);
    let mut vertices = Vec::with_capacity(n_around * (n_height + 1));
    for j in 0..=n_height {
        let z = h * j as f64 / n_height as f64;
        for i in 0..n_around {
            let theta = std::f64::consts::TAU * i as f64 / n_around as f64;
            vertices.push(Point3::new(
                cast(r * theta.cos()),
                cast(r * theta.sin()),
                cast(z),
            ));
        }
    }
    let mut faces = Vec::with_capacity(2 * n_around * n_height);
    for j in 0..n_height {
        for i in 0..n_around {
            let a = vid(i, j);
            let b = vid(i + 1, j);
            let c = vid(i + 1, j + 1);
            let d = vid(i, j + 1);
            // Outward winding (normal along +radial).
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriangleMesh::build(vertices, faces).expect("cylinder is a valid manifold")
}
