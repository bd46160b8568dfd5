//! Quaternion helpers shared by the deformation chain and the rasterizer
//! backward pass. External layout is (w, x, y, z).

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector4};

use crate::scalar::Real;

#[inline]
pub fn wxyz<T: Real>(q: &Quaternion<T>) -> Vector4<T> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

#[inline]
pub fn from_wxyz<T: Real>(v: &Vector4<T>) -> Quaternion<T> {
    Quaternion::new(v.x, v.y, v.z, v.w)
}

/// Left-multiplication matrix in wxyz layout: `wxyz(p * q) = ql(p) * wxyz(q)`.
pub fn ql_matrix<T: Real>(p: &Quaternion<T>) -> Matrix4<T> {
    let (w, x, y, z) = (p.w, p.i, p.j, p.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Right-multiplication matrix in wxyz layout: `wxyz(p * q) = qr(q) * wxyz(p)`.
pub fn qr_matrix<T: Real>(q: &Quaternion<T>) -> Matrix4<T> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn rotation_matrix<T: Real>(q: &UnitQuaternion<T>) -> Matrix3<T> {
    q.to_rotation_matrix().into_inner()
}

/// Partial derivatives of the unit-quaternion rotation matrix with respect
/// to the four components, evaluated at `q` (assumed unit), in wxyz order.
pub fn rotation_partials<T: Real>(q: &UnitQuaternion<T>) -> [Matrix3<T>; 4] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let two = T::one() + T::one();
    let zero = T::zero();
    let dw = Matrix3::new(zero, -z, y, z, zero, -x, -y, x, zero) * two;
    let dx = Matrix3::new(zero, y, z, y, -(x + x), -w, z, w, -(x + x)) * two;
    let dy = Matrix3::new(-(y + y), x, w, x, zero, z, -w, z, -(y + y)) * two;
    let dz = Matrix3::new(-(z + z), -w, x, w, -(z + z), y, x, y, zero) * two;
    [dw, dx, dy, dz]
}

/// Flips `q` into the hemisphere of `reference` (non-negative dot product).
pub fn hemisphere_align<T: Real>(q: Quaternion<T>, reference: &Quaternion<T>) -> Quaternion<T> {
    if q.dot(reference) < T::zero() {
        -q
    } else {
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random_unit(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ))
    }

    #[test]
    fn product_matrices_match_hamilton_product() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_unit(&mut rng).into_inner();
            let q = random_unit(&mut rng).into_inner();
            let direct = wxyz(&(p * q));
            assert_relative_eq!(direct, ql_matrix(&p) * wxyz(&q), epsilon = 1e-14);
            assert_relative_eq!(direct, qr_matrix(&q) * wxyz(&p), epsilon = 1e-14);
        }
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..20 {
            let q = random_unit(&mut rng);
            let parts = rotation_partials(&q);
            let base = wxyz(&q.into_inner());
            for c in 0..4 {
                let mut plus = base;
                plus[c] += h;
                let mut minus = base;
                minus[c] -= h;
                // Raw (unnormalized) perturbation of the unit formula.
                let rot = |v: Vector4<f64>| {
                    let (w, x, y, z) = (v.x, v.y, v.z, v.w);
                    nalgebra::Matrix3::new(
                        1.0 - 2.0 * (y * y + z * z),
                        2.0 * (x * y - w * z),
                        2.0 * (x * z + w * y),
                        2.0 * (x * y + w * z),
                        1.0 - 2.0 * (x * x + z * z),
                        2.0 * (y * z - w * x),
                        2.0 * (x * z - w * y),
                        2.0 * (y * z + w * x),
                        1.0 - 2.0 * (x * x + y * y),
                    )
                };
                let fd = (rot(plus) - rot(minus)) / (2.0 * h);
                assert_relative_eq!(parts[c], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rotation_sign_invariance() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q = random_unit(&mut rng);
            let neg = UnitQuaternion::new_unchecked(-q.into_inner());
            assert_eq!(rotation_matrix(&q), rotation_matrix(&neg));
        }
    }
}
