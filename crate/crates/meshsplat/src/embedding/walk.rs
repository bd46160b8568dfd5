//! Cross-triangle re-expression of barycentric updates.
//!
//! A barycentric step that exits its triangle is intersected with the exited
//! edge and re-expressed in the adjacent triangle's chart, recursively, with
//! the two triangles conceptually treated as right triangles glued on the
//! hypotenuse. The working chart is a rotation of the face's vertex tuple so
//! that the crossed edge always plays the hypotenuse role; the rotation is
//! undone when the walk terminates.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::scalar::{cast, Real};

/// Signed slack for the inside-triangle test; avoids edge bouncing on ties.
pub const WALK_SLACK: f64 = 1e-12;
/// Default hop budget before a walk is declared pathological.
pub const DEFAULT_MAX_HOPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkStatus {
    /// Update terminated inside a triangle.
    Interior,
    /// Walk reached a boundary edge; clamped to the edge intersection and the
    /// remaining delta discarded.
    BoundaryClamped,
    /// More than the hop budget of edge crossings; state at the last hop.
    MaxHopsExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkResult<T: Real> {
    pub k: usize,
    pub u: T,
    pub v: T,
    pub hops: usize,
    pub status: WalkStatus,
    /// Linear map taking a barycentric delta expressed in the start face's
    /// chart to the result face's chart. Identity when no edge was crossed;
    /// composition of the per-crossing re-expressions otherwise. Needed to
    /// continue a partially applied step in the new chart.
    pub delta_map: Matrix2<T>,
}

impl<T: Real> WalkResult<T> {
    /// True when the update ended inside a triangle without truncation.
    pub fn completed(&self) -> bool {
        self.status == WalkStatus::Interior
    }
}

/// Applies `(du, dv)` to the embedding coordinates `(k, u, v)`, walking
/// across edges until the update terminates.
pub fn walk_on_triangles<T: Real>(
    mesh: &TriangleMesh<T>,
    k: usize,
    u: T,
    v: T,
    du: T,
    dv: T,
) -> Result<WalkResult<T>> {
    walk_with_budget(mesh, k, u, v, du, dv, DEFAULT_MAX_HOPS)
}

pub fn walk_with_budget<T: Real>(
    mesh: &TriangleMesh<T>,
    k: usize,
    u: T,
    v: T,
    du: T,
    dv: T,
    max_hops: usize,
) -> Result<WalkResult<T>> {
    if !(u.is_finite() && v.is_finite() && du.is_finite() && dv.is_finite()) {
        return Err(Error::NonFiniteDelta);
    }
    if k >= mesh.num_faces() {
        return Err(Error::InvalidFace(k));
    }
    let slack = cast::<T>(WALK_SLACK);

    // Working chart: rotation `rot` of face `face`'s vertex tuple. The chart
    // hypotenuse (u + v = 1) is the face-local edge `rot`. `dmap` accumulates
    // the start-chart -> working-chart delta transform.
    let mut face = k;
    let mut rot = 0u8;
    let mut dmap = Matrix2::<T>::identity();
    let (mut u, mut v, mut du, mut dv) = (u, v, du, dv);

    let finish = |face: usize, rot: u8, u: T, v: T, dmap: Matrix2<T>, hops, status| {
        let (cu, cv) = to_canonical(rot, u, v);
        WalkResult {
            k: face,
            u: cu,
            v: cv,
            hops,
            status,
            delta_map: canonical_map::<T>(rot) * dmap,
        }
    };

    for hop in 0..max_hops {
        let qu = u + du;
        let qv = v + dv;
        if qu >= -slack && qv >= -slack && qu + qv <= T::one() + slack {
            return Ok(finish(face, rot, qu, qv, dmap, hop, WalkStatus::Interior));
        }

        // Edge functions, non-negative inside: g0 = 1-u-v (chart hypotenuse),
        // g1 = u, g2 = v. The exit edge is the first one crossed outward.
        let gp = [T::one() - u - v, u, v];
        let gq = [T::one() - qu - qv, qu, qv];
        let mut exit: Option<(u8, T)> = None;
        for e in 0..3 {
            if gq[e] < -slack && gp[e] > gq[e] {
                let t = (gp[e] / (gp[e] - gq[e])).max(T::zero());
                if exit.map_or(true, |(_, best)| t < best) {
                    exit = Some((e as u8, t));
                }
            }
        }
        let Some((edge, t)) = exit else {
            // Outside only along edges the motion re-enters; land on the
            // endpoint and let the next update continue from there.
            return Ok(finish(face, rot, qu, qv, dmap, hop, WalkStatus::Interior));
        };

        // Intersection point and remaining delta in the current chart.
        let iu = u + t * du;
        let iv = v + t * dv;
        let rem = T::one() - t;
        let (mut iu, mut iv, mut rdu, mut rdv) = (iu, iv, du * rem, dv * rem);

        // Rotate the chart so the crossed edge becomes the hypotenuse.
        match edge {
            0 => {}
            1 => {
                let w = T::one() - iu - iv;
                let (a, b) = (iv, w);
                let (da, db) = (rdv, -rdu - rdv);
                iu = a;
                iv = b;
                rdu = da;
                rdv = db;
                dmap = rotation_map::<T>(1) * dmap;
            }
            _ => {
                let w = T::one() - iu - iv;
                let (a, b) = (w, iu);
                let (da, db) = (-rdu - rdv, rdu);
                iu = a;
                iv = b;
                rdu = da;
                rdv = db;
                dmap = rotation_map::<T>(2) * dmap;
            }
        }
        rot = (rot + edge) % 3;

        match mesh.adjacent(face, rot) {
            None => {
                return Ok(finish(
                    face,
                    rot,
                    iu,
                    iv,
                    dmap,
                    hop + 1,
                    WalkStatus::BoundaryClamped,
                ));
            }
            Some((nf, ne)) => {
                // The shared edge runs reversed in the neighbor; starting its
                // chart at that edge makes the hypotenuse-reflection mapping
                // (u, v) -> (1-u, 1-v) the exact chart transition.
                face = nf;
                rot = ne;
                u = T::one() - iu;
                v = T::one() - iv;
                du = -rdu;
                dv = -rdv;
                dmap = -dmap;
            }
        }
    }

    Ok(finish(
        face,
        rot,
        u,
        v,
        dmap,
        max_hops,
        WalkStatus::MaxHopsExceeded,
    ))
}

/// Converts working-chart coordinates (chart = face tuple rotated by `rot`)
/// back to the face's canonical chart.
#[inline]
fn to_canonical<T: Real>(rot: u8, u: T, v: T) -> (T, T) {
    match rot {
        0 => (u, v),
        1 => (T::one() - u - v, u),
        _ => (v, T::one() - u - v),
    }
}

/// Linear part of the chart rotation by `j` acting on deltas.
#[inline]
fn rotation_map<T: Real>(j: u8) -> Matrix2<T> {
    let one = T::one();
    match j {
        1 => Matrix2::new(T::zero(), one, -one, -one),
        _ => Matrix2::new(-one, -one, one, T::zero()),
    }
}

/// Linear part of [`to_canonical`] acting on deltas.
#[inline]
fn canonical_map<T: Real>(rot: u8) -> Matrix2<T> {
    match rot {
        0 => Matrix2::identity(),
        1 => rotation_map(2),
        _ => rotation_map(1),
    }
}
