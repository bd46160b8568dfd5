//! Pinhole camera: world-to-camera rigid transform, +z forward, y down.

use nalgebra::{Matrix3, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T: Real> {
    /// Rotation block of the world-to-camera transform.
    pub rotation: Matrix3<T>,
    /// Translation: `x_cam = R * x_world + t`.
    pub translation: Vector3<T>,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    pub near: T,
    pub far: T,
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<T>,
        translation: Vector3<T>,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        near: T,
        far: T,
    ) -> Result<Self> {
        let tol = cast::<T>(1e-9);
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if defect > tol || (rotation.determinant() - T::one()).abs() > tol {
            return Err(Error::BadConfig(format!(
                "world_to_camera rotation block is not a rotation (defect {})",
                to_f64(defect)
            )));
        }
        if fx <= T::zero() || fy <= T::zero() || near >= far {
            return Err(Error::BadConfig("need fx, fy > 0 and near < far".into()));
        }
        Ok(Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
        })
    }

    /// Camera at `eye` looking at `target`: +z points at the target, y runs
    /// down (against `up`), x completes the right-handed frame.
    pub fn look_at(
        eye: Point3<T>,
        target: Point3<T>,
        up: Vector3<T>,
        fx: T,
        fy: T,
        width: usize,
        height: usize,
        near: T,
        far: T,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let mut axis = up;
        if forward.cross(&axis).norm() < cast(1e-9) {
            axis = if forward.x.abs() < cast(0.9) {
                Vector3::x()
            } else {
                Vector3::y()
            };
        }
        // Right-handed frame with +z forward and y down: x = z x up,
        // y = z x x.
        let right = forward.cross(&axis).normalize();
        let down = forward.cross(&right).normalize();
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * eye.coords);
        let half = cast::<T>(0.5);
        Self::new(
            rotation,
            translation,
            fx,
            fy,
            cast::<T>(width as f64) * half,
            cast::<T>(height as f64) * half,
            width,
            height,
            near,
            far,
        )
    }

    #[inline]
    pub fn to_camera(&self, p: &Point3<T>) -> Vector3<T> {
        self.rotation * p.coords + self.translation
    }

    /// Pixel coordinates of a camera-space point (z > 0).
    #[inline]
    pub fn project_camera_point(&self, t: &Vector3<T>) -> Vector2<T> {
        Vector2::new(self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy)
    }
}

/// JSON wire format: `world_to_camera` is the rigid 4x4, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub world_to_camera: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraRecord {
    pub fn from_camera<T: Real>(c: &Camera<T>) -> Self {
        let mut m = vec![0.0f64; 16];
        for r in 0..3 {
            for col in 0..3 {
                m[r * 4 + col] = to_f64(c.rotation[(r, col)]);
            }
            m[r * 4 + 3] = to_f64(c.translation[r]);
        }
        m[15] = 1.0;
        Self {
            world_to_camera: m,
            fx: to_f64(c.fx),
            fy: to_f64(c.fy),
            cx: to_f64(c.cx),
            cy: to_f64(c.cy),
            width: c.width,
            height: c.height,
            near: to_f64(c.near),
            far: to_f64(c.far),
        }
    }

    pub fn to_camera<T: Real>(&self) -> Result<Camera<T>> {
        if self.world_to_camera.len() != 16 {
            return Err(Error::BadConfig(format!(
                "world_to_camera needs 16 entries, got {}",
                self.world_to_camera.len()
            )));
        }
        let m = &self.world_to_camera;
        let rotation = Matrix3::from_fn(|r, c| cast(m[r * 4 + c]));
        let translation = Vector3::new(cast(m[3]), cast(m[7]), cast(m[11]));
        Camera::new(
            rotation,
            translation,
            cast(self.fx),
            cast(self.fy),
            cast(self.cx),
            cast(self.cy),
            self.width,
            self.height,
            cast(self.near),
            cast(self.far),
        )
    }
}
