//! Photometric loss (L1 plus the optional SSIM term) and the scaling
//! regularizer.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rasterizer::RenderOutput;
use crate::scalar::{cast, to_f64, Real};

use super::ssim::ssim_loss_and_grad;

pub struct PhotometricLoss<T: Real> {
    pub l1: f64,
    pub ssim: f64,
    /// d loss / d rendered pixel, ready for the rasterizer backward pass.
    pub grad_image: Vec<Vector3<T>>,
}

/// Composites the target over `background` using its mask (coverage alpha)
/// and compares against the rendered image, which the renderer already
/// composited over the same background via its transmittance.
pub fn photometric_loss<T: Real>(
    rendered: &RenderOutput<T>,
    target: &[Vector3<T>],
    mask: Option<&[T]>,
    background: Vector3<T>,
    lambda_l: f64,
    use_ssim: bool,
) -> Result<PhotometricLoss<T>> {
    let n = rendered.width * rendered.height;
    if target.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "target has {} pixels, render {}",
            target.len(),
            n
        )));
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} pixels, render {}",
                m.len(),
                n
            )));
        }
    }
    let composite: Vec<Vector3<T>> = match mask {
        None => target.to_vec(),
        Some(m) => target
            .iter()
            .zip(m)
            .map(|(t, &a)| t * a + background * (T::one() - a))
            .collect(),
    };

    let denom = cast::<T>((n * 3) as f64);
    let mut l1_sum = T::zero();
    let mut grad_image = vec![Vector3::<T>::zeros(); n];
    for i in 0..n {
        let diff = rendered.image[i] - composite[i];
        for c in 0..3 {
            l1_sum += diff[c].abs();
            grad_image[i][c] = cast::<T>(diff[c].signum().to_f64().unwrap_or(0.0)) / denom;
            if diff[c] == T::zero() {
                grad_image[i][c] = T::zero();
            }
        }
    }
    let l1 = to_f64(l1_sum / denom);

    let mut ssim = 0.0;
    if use_ssim && lambda_l > 0.0 {
        let (loss, grad) =
            ssim_loss_and_grad(&rendered.image, &composite, rendered.width, rendered.height);
        ssim = loss;
        let w = cast::<T>(lambda_l);
        for (g, s) in grad_image.iter_mut().zip(&grad) {
            *g += s * w;
        }
    }

    Ok(PhotometricLoss {
        l1,
        ssim,
        grad_image,
    })
}

/// Per-Gaussian penalty on the largest activated scale component when it
/// exceeds `max(t_s, t_r * smallest)`; subgradient flows only to the
/// penalized component.
pub fn scaling_regularizer<T: Real>(
    scales: &[Vector3<T>],
    t_s: f64,
    t_r: f64,
) -> (f64, Vec<Vector3<T>>) {
    let t_s = cast::<T>(t_s);
    let t_r = cast::<T>(t_r);
    let mut loss = T::zero();
    let mut grads = vec![Vector3::<T>::zeros(); scales.len()];
    for (i, s) in scales.iter().enumerate() {
        let mut hi = 0usize;
        let mut lo = 0usize;
        for c in 1..3 {
            if s[c] > s[hi] {
                hi = c;
            }
            if s[c] < s[lo] {
                lo = c;
            }
        }
        if s[hi] > t_s.max(t_r * s[lo]) {
            loss += s[hi].abs();
            grads[i][hi] = T::one();
        }
    }
    (to_f64(loss), grads)
}

/// PSNR between a render over black and the masked target, in dB.
pub fn psnr<T: Real>(
    rendered: &[Vector3<T>],
    target: &[Vector3<T>],
    mask: Option<&[T]>,
) -> f64 {
    assert_eq!(rendered.len(), target.len());
    let mut mse = 0.0f64;
    for i in 0..rendered.len() {
        let t = match mask {
            Some(m) => target[i] * m[i],
            None => target[i],
        };
        let d = rendered[i] - t;
        mse += to_f64(d.norm_squared());
    }
    mse /= (rendered.len() * 3) as f64;
    if mse < 1e-12 {
        return 120.0;
    }
    10.0 * (1.0 / mse).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_render(pixels: Vec<Vector3<f64>>, w: usize, h: usize) -> RenderOutput<f64> {
        RenderOutput {
            width: w,
            height: h,
            transmittance: vec![0.0; pixels.len()],
            contrib_count: vec![0; pixels.len()],
            image: pixels,
        }
    }

    #[test]
    fn identical_images_zero_l1() {
        let img = vec![Vector3::new(0.3, 0.5, 0.7); 12];
        let r = dummy_render(img.clone(), 4, 3);
        let out = photometric_loss(&r, &img, None, Vector3::zeros(), 0.0, false).unwrap();
        assert_eq!(out.l1, 0.0);
        assert!(out.grad_image.iter().all(|g| *g == Vector3::zeros()));
    }

    #[test]
    fn constant_offset_gives_mean_absolute_difference() {
        let a = vec![Vector3::new(0.5, 0.5, 0.5); 20];
        let b = vec![Vector3::new(0.6, 0.6, 0.6); 20];
        let r = dummy_render(a, 5, 4);
        let out = photometric_loss(&r, &b, None, Vector3::zeros(), 0.0, false).unwrap();
        assert!((out.l1 - 0.1).abs() < 1e-12);
        // Gradient is sign/N per coordinate.
        let expect = -1.0 / (20.0 * 3.0);
        for g in &out.grad_image {
            for c in 0..3 {
                assert!((g[c] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(12);
        let (w, h) = (6, 5);
        let mut img: Vec<Vector3<f64>> = (0..w * h)
            .map(|_| {
                Vector3::new(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let target: Vec<Vector3<f64>> = (0..w * h)
            .map(|_| {
                Vector3::new(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let r = dummy_render(img.clone(), w, h);
        let out = photometric_loss(&r, &target, None, Vector3::zeros(), 0.0, false).unwrap();
        let hs = 1e-7;
        for _ in 0..20 {
            let i = rng.random_range(0..w * h);
            let c = rng.random_range(0..3usize);
            let orig = img[i][c];
            img[i][c] = orig + hs;
            let lp = photometric_loss(&dummy_render(img.clone(), w, h), &target, None,
                Vector3::zeros(), 0.0, false).unwrap().l1;
            img[i][c] = orig - hs;
            let lm = photometric_loss(&dummy_render(img.clone(), w, h), &target, None,
                Vector3::zeros(), 0.0, false).unwrap().l1;
            img[i][c] = orig;
            let fd = (lp - lm) / (2.0 * hs);
            // fd noise floor is ~1e-16 / (2 * hs)
            assert!((out.grad_image[i][c] - fd).abs() < 1e-8, "{} vs {fd}", out.grad_image[i][c]);
        }
    }

    #[test]
    fn scaling_regularizer_branches() {
        // Isotropic and below t_s: zero.
        let (l, g) = scaling_regularizer(&[Vector3::new(5.0, 5.0, 5.0)], 10.0, 0.008);
        assert_eq!(l, 0.0);
        assert_eq!(g[0], Vector3::zeros());
        // Long axis above t_s contributes its own value.
        let (l, g) = scaling_regularizer(&[Vector3::new(12.0, 1.0, 1.0)], 10.0, 0.008);
        assert_eq!(l, 12.0);
        assert_eq!(g[0], Vector3::new(1.0, 0.0, 0.0));
        // Sum over gaussians.
        let (l, _) = scaling_regularizer(
            &[Vector3::new(12.0, 1.0, 1.0), Vector3::new(11.0, 11.0, 11.0)],
            10.0,
            0.008,
        );
        assert_eq!(l, 23.0);
    }

    #[test]
    fn mask_composites_target_over_background() {
        let img = vec![Vector3::new(1.0, 0.0, 0.0); 1];
        let target = vec![Vector3::new(1.0, 0.0, 0.0); 1];
        let mask = vec![0.0f64];
        let bg = Vector3::new(1.0, 0.0, 0.0);
        // Masked-out target becomes bg, which matches the render: zero loss.
        let r = dummy_render(img, 1, 1);
        let out = photometric_loss(&r, &target, Some(&mask), bg, 0.0, false).unwrap();
        assert_eq!(out.l1, 0.0);
    }
}
