//! Scalar abstraction: all core math is generic over `Real` (f32 or f64).

use nalgebra::RealField;

/// Floating-point scalar usable throughout the crate: `f32` or `f64`.
pub trait Real:
    RealField + Copy + Default + num_traits::FromPrimitive + num_traits::ToPrimitive
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Lossy conversion from an `f64` literal or intermediate into `T`.
#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Back-conversion for reporting and serialization.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("real scalar converts to f64")
}

/// Standard logistic sigmoid.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Inverse sigmoid; input clamped away from {0, 1}.
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    let eps = cast::<T>(1e-12);
    let p = p.clamp(eps, T::one() - eps);
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_logit_round_trip() {
        for &p in &[0.005f64, 0.1, 0.5, 0.9, 0.99] {
            let x = logit(p);
            assert!((sigmoid(x) - p).abs() < 1e-12);
        }
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cast_round_trip_f32() {
        let x: f32 = cast(0.25);
        assert_eq!(to_f64(x), 0.25);
    }
}
