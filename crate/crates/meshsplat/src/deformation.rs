//! Per-frame deformation transfer from the canonical mesh to a posed mesh:
//! per-triangle rotations, area-weighted per-vertex quaternions, barycentric
//! quaternion interpolation, and area-ratio scaling of embedded Gaussians.

use nalgebra::{Point3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector4};
use rayon::prelude::*;

use crate::embedding::{embedding_jacobian, Embedding};
use crate::error::{Error, Result};
use crate::gaussians::quat::{hemisphere_align, ql_matrix, qr_matrix, wxyz};
use crate::gaussians::Gaussian;
use crate::geometry::TriangleMesh;
use crate::scalar::{cast, Real};

/// Per-frame deformation data, built once per posed mesh and shared by all
/// Gaussians.
#[derive(Debug, Clone)]
pub struct DeformationField<T: Real> {
    pub frame_id: usize,
    /// Canonical-to-posed rotation per face.
    pub tri_quats: Vec<UnitQuaternion<T>>,
    /// Area-weighted average of incident face rotations, per vertex.
    pub vertex_quats: Vec<UnitQuaternion<T>>,
    /// `A_pose / A_cano` per face.
    pub area_ratios: Vec<T>,
}

/// A Gaussian carried into posed space.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedGaussian<T: Real> {
    pub position: Point3<T>,
    pub rotation: UnitQuaternion<T>,
    /// Activated (linear-space) scale.
    pub scale: Vector3<T>,
    /// Opacity logit, unchanged by posing.
    pub opacity: T,
    pub color: Vector3<T>,
}

fn check_topology<T: Real>(cano: &TriangleMesh<T>, posed: &TriangleMesh<T>) -> Result<()> {
    if cano.checksum() != posed.checksum() || cano.num_vertices() != posed.num_vertices() {
        return Err(Error::TopologyMismatch(
            "posed mesh does not share the canonical face buffer".into(),
        ));
    }
    Ok(())
}

/// Rotation carrying face `k`'s frame from the canonical to the posed mesh,
/// as a quaternion. `prev` hemisphere-aligns the sign for temporal
/// continuity across frames.
pub fn triangle_rotation<T: Real>(
    cano: &TriangleMesh<T>,
    posed: &TriangleMesh<T>,
    k: usize,
    prev: Option<&UnitQuaternion<T>>,
) -> Result<UnitQuaternion<T>> {
    check_topology(cano, posed)?;
    let rotation = posed.triangle_frame(k)? * cano.triangle_frame(k)?.transpose();
    let mut q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation))
        .into_inner();
    if let Some(p) = prev {
        q = hemisphere_align(q, &p.into_inner());
    }
    Ok(UnitQuaternion::new_unchecked(q))
}

/// Area-weighted per-vertex average of the face quaternions, sign-aligned to
/// each vertex's first incident face before summing, then normalized.
/// Vertices with no incident face get the identity.
pub fn vertex_quaternion_field<T: Real>(
    cano: &TriangleMesh<T>,
    tri_quats: &[UnitQuaternion<T>],
) -> Vec<UnitQuaternion<T>> {
    assert_eq!(tri_quats.len(), cano.num_faces());
    let mut sums = vec![Quaternion::<T>::new(T::zero(), T::zero(), T::zero(), T::zero());
        cano.num_vertices()];
    let mut reference: Vec<Option<Quaternion<T>>> = vec![None; cano.num_vertices()];
    for (k, f) in cano.faces().iter().enumerate() {
        let area = cano.face_area(k);
        for &vi in f {
            let q = match &reference[vi] {
                None => {
                    let q = tri_quats[k].into_inner();
                    reference[vi] = Some(q);
                    q
                }
                Some(r) => hemisphere_align(tri_quats[k].into_inner(), r),
            };
            sums[vi] += q * area;
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(vi, q)| {
            let n = q.norm();
            if reference[vi].is_none() {
                log::warn!("vertex {vi} has no incident faces; using identity rotation");
                UnitQuaternion::identity()
            } else if n < cast(1e-12) {
                UnitQuaternion::identity()
            } else {
                UnitQuaternion::new_unchecked(q / n)
            }
        })
        .collect()
}

/// Builds the full deformation field for one frame. `prev` keeps quaternion
/// signs temporally continuous.
pub fn build_field<T: Real>(
    cano: &TriangleMesh<T>,
    posed: &TriangleMesh<T>,
    frame_id: usize,
    prev: Option<&DeformationField<T>>,
) -> Result<DeformationField<T>> {
    check_topology(cano, posed)?;
    let tri_quats: Vec<UnitQuaternion<T>> = (0..cano.num_faces())
        .into_par_iter()
        .map(|k| triangle_rotation(cano, posed, k, prev.map(|p| &p.tri_quats[k])))
        .collect::<Result<_>>()?;
    let vertex_quats = vertex_quaternion_field(cano, &tri_quats);
    let area_ratios = (0..cano.num_faces())
        .map(|k| posed.face_area(k) / cano.face_area(k))
        .collect();
    Ok(DeformationField {
        frame_id,
        tri_quats,
        vertex_quats,
        area_ratios,
    })
}

/// Sign-aligned vertex quaternions of face `k`, ready for barycentric
/// interpolation.
fn face_corner_quats<T: Real>(
    posed: &TriangleMesh<T>,
    field: &DeformationField<T>,
    k: usize,
) -> [Quaternion<T>; 3] {
    let f = posed.faces()[k];
    let q1 = field.vertex_quats[f[0]].into_inner();
    let q2 = hemisphere_align(field.vertex_quats[f[1]].into_inner(), &q1);
    let q3 = hemisphere_align(field.vertex_quats[f[2]].into_inner(), &q1);
    [q1, q2, q3]
}

fn interpolated_delta<T: Real>(corners: &[Quaternion<T>; 3], u: T, v: T) -> (Quaternion<T>, T) {
    let w = T::one() - u - v;
    let m = corners[0] * u + corners[1] * v + corners[2] * w;
    let n = m.norm();
    (m, n)
}

/// Carries one Gaussian to posed space: position from the embedding on the
/// posed mesh, rotation by the interpolated vertex quaternion, scale by the
/// face's area ratio. Opacity and color are pose-invariant.
pub fn pose_gaussian<T: Real>(
    posed: &TriangleMesh<T>,
    field: &DeformationField<T>,
    e: &Embedding<T>,
    g: &Gaussian<T>,
) -> Result<PosedGaussian<T>> {
    let position = crate::embedding::embedded_position(posed, e)?;
    let corners = face_corner_quats(posed, field, e.k);
    let (m, n) = interpolated_delta(&corners, e.u, e.v);
    let delta = if n < cast(1e-12) {
        UnitQuaternion::identity()
    } else {
        UnitQuaternion::new_unchecked(m / n)
    };
    let rotation = delta * g.rotation;
    let scale = g.activated_scale() * field.area_ratios[e.k];
    Ok(PosedGaussian {
        position,
        rotation,
        scale,
        opacity: g.opacity,
        color: g.color,
    })
}

/// Gradients of some scalar loss with respect to a posed Gaussian.
#[derive(Debug, Clone, Copy, Default)]
pub struct PosedGrad<T: Real> {
    pub position: Vector3<T>,
    /// w.r.t. the posed unit quaternion, free 4-vector in wxyz layout.
    pub rotation: Vector4<T>,
    /// w.r.t. the activated posed scale.
    pub scale: Vector3<T>,
}

/// Gradients chained back to the trainable parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParamGrad<T: Real> {
    pub du: T,
    pub dv: T,
    pub dd: T,
    /// w.r.t. the canonical quaternion, projected onto its tangent space
    /// (wxyz layout).
    pub rotation: Vector4<T>,
    /// w.r.t. the canonical log-scale.
    pub log_scale: Vector3<T>,
}

/// Backward pass of [`pose_gaussian`]: chains posed-space gradients to the
/// embedding coordinates `(u, v, d)`, the canonical rotation, and the
/// canonical log-scale. Opacity and color gradients pass through unchanged
/// and are not repeated here.
pub fn pose_backward<T: Real>(
    posed: &TriangleMesh<T>,
    field: &DeformationField<T>,
    e: &Embedding<T>,
    g: &Gaussian<T>,
    grad: &PosedGrad<T>,
) -> Result<ParamGrad<T>> {
    let jac = embedding_jacobian(posed, e)?;
    let mut out = ParamGrad::<T>::default();

    // Position path.
    out.du = grad.position.dot(&jac.du);
    out.dv = grad.position.dot(&jac.dv);
    out.dd = grad.position.dot(&jac.normal);

    // Rotation path: q = delta * q_bar.
    let corners = face_corner_quats(posed, field, e.k);
    let (m, n) = interpolated_delta(&corners, e.u, e.v);
    let delta = if n < cast(1e-12) {
        UnitQuaternion::identity()
    } else {
        UnitQuaternion::new_unchecked(m / n)
    };

    // d q_bar (free) = QL(delta)^T dq, then projected to the tangent at q_bar.
    let dq_bar_free = ql_matrix(&delta.into_inner()).transpose() * grad.rotation;
    let qb = wxyz(&g.rotation.into_inner());
    out.rotation = dq_bar_free - qb * qb.dot(&dq_bar_free);

    // d delta (free) = QR(q_bar)^T dq, chained through the normalization.
    if n >= cast(1e-12) {
        let d_delta = qr_matrix(&g.rotation.into_inner()).transpose() * grad.rotation;
        let dunit = wxyz(&delta.into_inner());
        let dm = (d_delta - dunit * dunit.dot(&d_delta)) / n;
        out.du += dm.dot(&wxyz(&(corners[0] - corners[2])));
        out.dv += dm.dot(&wxyz(&(corners[1] - corners[2])));
    }

    // Scale path: s = ratio * exp(s_bar), so d s_bar = ds * s.
    let ratio = field.area_ratios[e.k];
    let s = g.activated_scale() * ratio;
    out.log_scale = grad.scale.component_mul(&s);

    Ok(out)
}
