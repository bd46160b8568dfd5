//! Canonical Gaussian parameters, activations, and covariance construction
//! and projection.

mod camera;
mod ply;
pub mod quat;

pub use camera::{Camera, CameraRecord};
pub use ply::{read_splat_ply, write_splat_ply, SH_C0};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Point3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{cast, sigmoid, to_f64, Real};

/// Low-pass floor added to projected screen covariances, in pixels.
pub const LOW_PASS_SIGMA: f64 = 0.3;

/// Pose-invariant Gaussian parameters. Scale lives in log space and opacity
/// in logit space so optimizer steps are unconstrained; color is plain RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T: Real> {
    pub rotation: UnitQuaternion<T>,
    pub log_scale: Vector3<T>,
    pub opacity: T,
    pub color: Vector3<T>,
}

impl<T: Real> Gaussian<T> {
    pub fn activated_scale(&self) -> Vector3<T> {
        self.log_scale.map(|s| s.exp())
    }

    pub fn activated_opacity(&self) -> T {
        sigmoid(self.opacity)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().all(|c| c.is_finite())
            && self.log_scale.iter().all(|c| c.is_finite())
            && self.opacity.is_finite()
            && self.color.iter().all(|c| c.is_finite())
    }
}

/// `Sigma = R diag(s^2) R^T` for a unit rotation and positive scales.
pub fn covariance3d<T: Real>(q: &UnitQuaternion<T>, s: &Vector3<T>) -> Matrix3<T> {
    let r = q.to_rotation_matrix().into_inner();
    let d = Matrix3::from_diagonal(&s.component_mul(s));
    r * d * r.transpose()
}

/// Perspective Jacobian of the pixel projection at camera-space point `t`.
pub fn projection_jacobian<T: Real>(camera: &Camera<T>, t: &Vector3<T>) -> Matrix2x3<T> {
    let zi = T::one() / t.z;
    let zi2 = zi * zi;
    Matrix2x3::new(
        camera.fx * zi,
        T::zero(),
        -camera.fx * t.x * zi2,
        T::zero(),
        camera.fy * zi,
        -camera.fy * t.y * zi2,
    )
}

/// Projects a world covariance to screen space: `J W Sigma W^T J^T` plus the
/// low-pass floor. Errors when the mean sits behind the near plane.
pub fn project_covariance<T: Real>(
    sigma: &Matrix3<T>,
    camera: &Camera<T>,
    mu: &Point3<T>,
) -> Result<Matrix2<T>> {
    let t = camera.to_camera(mu);
    if t.z <= camera.near {
        return Err(Error::BehindCamera(to_f64(t.z)));
    }
    let j = projection_jacobian(camera, &t);
    let m = j * camera.rotation;
    let floor = cast::<T>(LOW_PASS_SIGMA * LOW_PASS_SIGMA);
    Ok(m * sigma * m.transpose() + Matrix2::identity() * floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Quaternion;
    use rand::{Rng, SeedableRng};

    fn test_camera(f: f64, depth_axis: bool) -> Camera<f64> {
        let _ = depth_axis;
        Camera::new(
            Matrix3::identity(),
            Vector3::zeros(),
            f,
            f,
            32.0,
            32.0,
            64,
            64,
            0.01,
            1e6,
        )
        .unwrap()
    }

    #[test]
    fn covariance_axis_aligned() {
        let s = Vector3::new(2.0, 3.0, 4.0);
        let sigma = covariance3d(&UnitQuaternion::<f64>::identity(), &s);
        assert_relative_eq!(
            sigma,
            Matrix3::from_diagonal(&Vector3::new(4.0, 9.0, 16.0)),
            epsilon = 1e-14
        );
    }

    #[test]
    fn covariance_isotropic_any_rotation() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            let q = UnitQuaternion::from_quaternion(Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let r = 0.7;
            let sigma = covariance3d(&q, &Vector3::new(r, r, r));
            assert_relative_eq!(sigma, Matrix3::identity() * r * r, epsilon = 1e-13);
        }
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = UnitQuaternion::from_quaternion(Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let s = Vector3::new(
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..2.0),
            );
            let sigma = covariance3d(&q, &s);
            let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
            let mut expect: Vec<f64> = s.iter().map(|x| x * x).collect();
            eig.sort_by(|a, b| a.total_cmp(b));
            expect.sort_by(|a, b| a.total_cmp(b));
            for (e, x) in eig.iter().zip(&expect) {
                assert!((e - x).abs() < 1e-9, "{eig:?} vs {expect:?}");
            }
            // Sign of the quaternion is irrelevant.
            let neg = UnitQuaternion::new_unchecked(-q.into_inner());
            assert_eq!(covariance3d(&neg, &s), sigma);
        }
    }

    #[test]
    fn projection_low_pass_floor_dominates_tiny_gaussians() {
        let cam = test_camera(60.0, true);
        let sigma = Matrix3::identity() * 1e-12;
        let out = project_covariance(&sigma, &cam, &Point3::new(0.1, -0.2, 3.0)).unwrap();
        let floor = LOW_PASS_SIGMA * LOW_PASS_SIGMA;
        assert_relative_eq!(out, Matrix2::identity() * floor, epsilon = 1e-8);
    }

    #[test]
    fn projection_matches_pinhole_magnification() {
        let f = 80.0;
        let cam = test_camera(f, true);
        let r = 0.05;
        let tz = 4.0;
        let sigma = Matrix3::identity() * r * r;
        let out = project_covariance(&sigma, &cam, &Point3::new(0.0, 0.0, tz)).unwrap();
        let expect = (f * r / tz).powi(2) + LOW_PASS_SIGMA * LOW_PASS_SIGMA;
        assert_relative_eq!(out, Matrix2::identity() * expect, epsilon = 1e-9);

        // Doubling the depth shrinks the pre-floor screen covariance 4x.
        let far = project_covariance(&sigma, &cam, &Point3::new(0.0, 0.0, 2.0 * tz)).unwrap();
        let floor = Matrix2::identity() * LOW_PASS_SIGMA * LOW_PASS_SIGMA;
        assert_relative_eq!((out - floor) / 4.0, far - floor, epsilon = 1e-9);
    }

    #[test]
    fn projection_behind_camera_rejected() {
        let cam = test_camera(60.0, true);
        let sigma = Matrix3::identity() * 0.01;
        assert!(matches!(
            project_covariance(&sigma, &cam, &Point3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn projection_equivariant_under_camera_roll() {
        let f = 75.0;
        let base = test_camera(f, true);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(8);
        for _ in 0..20 {
            let theta: f64 = rng.random_range(-3.0..3.0);
            let roll2 = nalgebra::Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos());
            let roll3 = Matrix3::new(
                theta.cos(),
                -theta.sin(),
                0.0,
                theta.sin(),
                theta.cos(),
                0.0,
                0.0,
                0.0,
                1.0,
            );
            let rolled = Camera::new(
                roll3 * base.rotation,
                Vector3::zeros(),
                f,
                f,
                32.0,
                32.0,
                64,
                64,
                0.01,
                1e6,
            )
            .unwrap();
            let q = UnitQuaternion::from_euler_angles(0.4, -0.2, 0.9);
            let sigma = covariance3d(&q, &Vector3::new(0.08, 0.02, 0.05));
            let mu = Point3::new(0.0, 0.0, 5.0);
            let floor = Matrix2::identity() * LOW_PASS_SIGMA * LOW_PASS_SIGMA;
            let s_base = project_covariance(&sigma, &base, &mu).unwrap() - floor;
            let s_roll = project_covariance(&sigma, &rolled, &mu).unwrap() - floor;
            // Rolling the camera rolls camera-space points, so screen offsets
            // and the pre-floor covariance rotate along.
            assert_relative_eq!(s_roll, roll2 * s_base * roll2.transpose(), epsilon = 1e-9);
        }
    }

    #[test]
    fn projected_covariance_stays_positive_definite() {
        let cam = test_camera(90.0, true);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let q = UnitQuaternion::from_quaternion(Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let s = Vector3::new(
                rng.random_range(1e-4..0.5),
                rng.random_range(1e-4..0.5),
                rng.random_range(1e-4..0.5),
            );
            let mu = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..10.0),
            );
            let out = project_covariance(&covariance3d(&q, &s), &cam, &mu).unwrap();
            let det = out[(0, 0)] * out[(1, 1)] - out[(0, 1)] * out[(1, 0)];
            assert!(det > 0.0 && out.trace() > 0.0);
        }
    }
}
