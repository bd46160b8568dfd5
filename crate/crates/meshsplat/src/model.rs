//! The trainable surface model: embeddings with pending barycentric deltas
//! plus the pose-invariant Gaussian parameters, and the full differentiable
//! chain from rendered pixels back to every parameter.

use nalgebra::{Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::deformation::{pose_backward, pose_gaussian, DeformationField, PosedGaussian, PosedGrad};
use crate::embedding::{clamp_to_simplex, BaryDelta, Embedding};
use crate::error::{Error, Result};
use crate::gaussians::{Camera, Gaussian};
use crate::geometry::TriangleMesh;
use crate::rasterizer::{render_backward, RenderOutput, ScreenGradients};
use crate::scalar::Real;

/// Gaussians embedded on a canonical mesh. The optimizer works on the
/// deltas `(du, dv, dd)` relative to the recorded embeddings; walking
/// absorbs deltas back into the embeddings.
#[derive(Debug, Clone, Default)]
pub struct SurfaceModel<T: Real> {
    pub embeddings: Vec<Embedding<T>>,
    pub deltas: Vec<BaryDelta<T>>,
    pub gaussians: Vec<Gaussian<T>>,
}

/// Per-coordinate clamp mask of an effective embedding evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClampMask {
    pub u: bool,
    pub v: bool,
}

impl<T: Real> SurfaceModel<T> {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Model/delta cardinality lockstep.
    pub fn consistent(&self) -> bool {
        self.embeddings.len() == self.deltas.len() && self.embeddings.len() == self.gaussians.len()
    }

    /// The embedding actually evaluated: recorded coordinates plus pending
    /// deltas, clamped into the simplex.
    pub fn effective_embedding(&self, i: usize) -> (Embedding<T>, ClampMask) {
        let e = self.embeddings[i];
        let d = self.deltas[i];
        let ru = e.u + d.du;
        let rv = e.v + d.dv;
        let (cu, cv, _) = clamp_to_simplex(ru, rv);
        let mask = ClampMask {
            u: cu != ru,
            v: cv != rv,
        };
        (Embedding::new(e.k, cu, cv, e.d + d.dd), mask)
    }

    /// Poses every Gaussian for one frame.
    pub fn pose_all(
        &self,
        posed_mesh: &TriangleMesh<T>,
        field: &DeformationField<T>,
    ) -> Result<Vec<PosedGaussian<T>>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let (e, _) = self.effective_embedding(i);
                pose_gaussian(posed_mesh, field, &e, &self.gaussians[i])
            })
            .collect()
    }

    /// Fraction of embeddings sitting within `margin` of a triangle edge
    /// (boundary-stuck measure for the walking ablation).
    pub fn boundary_stuck_fraction(&self, margin: T) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let stuck = (0..self.len())
            .filter(|&i| self.effective_embedding(i).0.min_margin() < margin)
            .count();
        stuck as f64 / self.len() as f64
    }
}

/// Gradients for every trainable parameter of the model.
#[derive(Debug, Clone)]
pub struct GradientSet<T: Real> {
    /// d loss / d (du, dv, dd) per embedding.
    pub embedding: Vec<Vector3<T>>,
    /// d loss / d canonical quaternion (tangent-projected, wxyz).
    pub rotation: Vec<Vector4<T>>,
    /// d loss / d log-scale.
    pub log_scale: Vec<Vector3<T>>,
    /// d loss / d opacity logit.
    pub opacity: Vec<T>,
    /// d loss / d color.
    pub color: Vec<Vector3<T>>,
    /// Pixel-space screen mean gradient (densification statistic).
    pub mean2d: Vec<Vector2<T>>,
    /// 3-sigma screen radius in pixels, zero when culled.
    pub radii: Vec<T>,
}

impl<T: Real> GradientSet<T> {
    pub fn is_finite(&self) -> bool {
        self.embedding.iter().all(|g| g.iter().all(|x| x.is_finite()))
            && self.rotation.iter().all(|g| g.iter().all(|x| x.is_finite()))
            && self.log_scale.iter().all(|g| g.iter().all(|x| x.is_finite()))
            && self.opacity.iter().all(|x| x.is_finite())
            && self.color.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Renders the model for one frame.
pub fn render_model<T: Real>(
    model: &SurfaceModel<T>,
    posed_mesh: &TriangleMesh<T>,
    field: &DeformationField<T>,
    camera: &Camera<T>,
    background: Vector3<T>,
) -> Result<RenderOutput<T>> {
    let posed = model.pose_all(posed_mesh, field)?;
    Ok(crate::rasterizer::render(&posed, camera, background))
}

/// Full backward chain: image gradient -> posed-Gaussian gradients ->
/// embedding coordinates and canonical parameters. Clamped coordinates get
/// zero gradients (hard clamp semantics).
pub fn render_backward_model<T: Real>(
    model: &SurfaceModel<T>,
    posed_mesh: &TriangleMesh<T>,
    field: &DeformationField<T>,
    camera: &Camera<T>,
    background: Vector3<T>,
    grad_image: &[Vector3<T>],
) -> Result<GradientSet<T>> {
    let posed = model.pose_all(posed_mesh, field)?;
    let screen = render_backward(&posed, camera, background, grad_image)?;
    backward_from_screen(model, posed_mesh, field, &screen)
}

/// Chains already-computed screen gradients through the posing pipeline.
pub fn backward_from_screen<T: Real>(
    model: &SurfaceModel<T>,
    posed_mesh: &TriangleMesh<T>,
    field: &DeformationField<T>,
    screen: &ScreenGradients<T>,
) -> Result<GradientSet<T>> {
    let n = model.len();
    let per: Vec<(Vector3<T>, Vector4<T>, Vector3<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (e, mask) = model.effective_embedding(i);
            let grad = PosedGrad {
                position: screen.position[i],
                rotation: screen.rotation[i],
                scale: screen.scale[i],
            };
            let p = pose_backward(posed_mesh, field, &e, &model.gaussians[i], &grad)?;
            let du = if mask.u || mask.v { T::zero() } else { p.du };
            let dv = if mask.u || mask.v { T::zero() } else { p.dv };
            Ok((Vector3::new(du, dv, p.dd), p.rotation, p.log_scale))
        })
        .collect::<Result<_>>()?;

    let mut out = GradientSet {
        embedding: Vec::with_capacity(n),
        rotation: Vec::with_capacity(n),
        log_scale: Vec::with_capacity(n),
        opacity: screen.opacity.clone(),
        color: screen.color.clone(),
        mean2d: screen.mean2d.clone(),
        radii: screen.radii.clone(),
    };
    for (i, (emb, rot, ls)) in per.into_iter().enumerate() {
        out.embedding.push(emb);
        out.rotation.push(rot);
        out.log_scale.push(ls);
        let _ = i;
    }
    if !out.is_finite() {
        let bad = out
            .embedding
            .iter()
            .position(|g| !g.iter().all(|x| x.is_finite()))
            .unwrap_or(0);
        return Err(Error::NonFiniteGradient(bad));
    }
    Ok(out)
}
