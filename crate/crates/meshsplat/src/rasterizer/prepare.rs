//! Per-Gaussian screen-space preparation shared by the forward, reference,
//! and backward passes.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, UnitQuaternion, Vector2, Vector3};

use crate::deformation::PosedGaussian;
use crate::gaussians::{covariance3d, projection_jacobian, Camera, LOW_PASS_SIGMA};
use crate::scalar::{cast, sigmoid, Real};

/// Condition-number ceiling for the floored screen covariance.
pub const MAX_CONDITION: f64 = 1e12;

/// One visible Gaussian prepared for rasterization.
#[derive(Debug, Clone)]
pub struct Splat<T: Real> {
    /// Index into the caller's posed-Gaussian array.
    pub index: usize,
    /// Camera-space mean.
    pub t_cam: Vector3<T>,
    /// Pixel-space mean.
    pub mean2d: Vector2<T>,
    /// Inverse of the floored screen covariance.
    pub conic: Matrix2<T>,
    /// Floored screen covariance.
    pub cov2d: Matrix2<T>,
    /// World covariance.
    pub cov3d: Matrix3<T>,
    /// `J * W_rot`, the linearized world-to-screen map at the mean.
    pub m: Matrix2x3<T>,
    pub jacobian: Matrix2x3<T>,
    /// Posed rotation (unit quaternion and its matrix) and activated scale,
    /// kept for the backward chain through the covariance.
    pub unit_quat: UnitQuaternion<T>,
    pub rot3d: Matrix3<T>,
    pub scale3d: Vector3<T>,
    /// Activated opacity.
    pub opacity: T,
    pub color: Vector3<T>,
    /// Inclusive pixel-index bounds of the 3-sigma box: [x0, y0, x1, y1].
    pub bounds: [i64; 4],
    /// 3-sigma screen radius in pixels.
    pub radius: T,
}

impl<T: Real> Splat<T> {
    /// Pixel-center containment test against the 3-sigma bounds; the one
    /// predicate every render path must share.
    #[inline]
    pub fn covers(&self, x: i64, y: i64) -> bool {
        x >= self.bounds[0] && y >= self.bounds[1] && x <= self.bounds[2] && y <= self.bounds[3]
    }
}

/// Culls, projects, and depth-sorts the posed Gaussians front to back
/// (camera-space z, ties broken by input index).
pub fn prepare_splats<T: Real>(posed: &[PosedGaussian<T>], camera: &Camera<T>) -> Vec<Splat<T>> {
    let mut splats: Vec<Splat<T>> = Vec::with_capacity(posed.len());
    let floor = cast::<T>(LOW_PASS_SIGMA * LOW_PASS_SIGMA);
    for (index, g) in posed.iter().enumerate() {
        let t_cam = camera.to_camera(&g.position);
        if t_cam.z <= camera.near {
            continue;
        }
        let cov3d = covariance3d(&g.rotation, &g.scale);
        let jacobian = projection_jacobian(camera, &t_cam);
        let m = jacobian * camera.rotation;
        let cov2d = m * cov3d * m.transpose() + Matrix2::identity() * floor;

        // Symmetric 2x2 eigenvalues for the radius and conditioning.
        let a = cov2d[(0, 0)];
        let b = cov2d[(0, 1)];
        let c = cov2d[(1, 1)];
        let mid = (a + c) * cast::<T>(0.5);
        let disc = ((a - c) * (a - c) * cast::<T>(0.25) + b * b).max(T::zero()).sqrt();
        let lam_max = mid + disc;
        let lam_min = mid - disc;
        if lam_min <= T::zero() || lam_max / lam_min > cast(MAX_CONDITION) {
            continue;
        }
        let det = a * c - b * b;
        let conic = Matrix2::new(c / det, -b / det, -b / det, a / det);

        let radius = cast::<T>(3.0) * lam_max.sqrt();
        let mean2d = camera.project_camera_point(&t_cam);
        // Pixel (ix, iy) has center (ix + 0.5, iy + 0.5); keep pixels whose
        // center lies within the radius box.
        let x0 = (mean2d.x - radius - cast(0.5)).ceil();
        let x1 = (mean2d.x + radius - cast(0.5)).floor();
        let y0 = (mean2d.y - radius - cast(0.5)).ceil();
        let y1 = (mean2d.y + radius - cast(0.5)).floor();
        let to_i = |v: T| -> i64 {
            crate::scalar::to_f64(v.clamp(cast(-1e14), cast(1e14))) as i64
        };
        let bounds = [to_i(x0), to_i(y0), to_i(x1), to_i(y1)];
        if bounds[2] < 0
            || bounds[0] >= camera.width as i64
            || bounds[3] < 0
            || bounds[1] >= camera.height as i64
            || bounds[0] > bounds[2]
            || bounds[1] > bounds[3]
        {
            continue;
        }
        splats.push(Splat {
            index,
            t_cam,
            mean2d,
            conic,
            cov2d,
            cov3d,
            m,
            jacobian,
            unit_quat: g.rotation,
            rot3d: g.rotation.to_rotation_matrix().into_inner(),
            scale3d: g.scale,
            opacity: sigmoid(g.opacity),
            color: g.color,
            bounds,
            radius,
        });
    }
    splats.sort_by(|p, q| {
        p.t_cam
            .z
            .partial_cmp(&q.t_cam.z)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(p.index.cmp(&q.index))
    });
    splats
}
