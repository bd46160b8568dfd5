//! Differentiable SSIM with an 11x11 Gaussian window (sigma 1.5), computed
//! over the valid interior and averaged across pixels and channels.

use nalgebra::Vector3;

use crate::scalar::{cast, to_f64, Real};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let mid = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - mid).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Horizontal then vertical valid convolution with the separable window.
fn conv_valid(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut tmp = vec![0.0; vw * h];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            tmp[y * vw + x] = acc;
        }
    }
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatters valid-region derivatives back onto
/// the source grid.
fn conv_adjoint(d_out: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut tmp = vec![0.0; vw * h];
    for y in 0..vh {
        for x in 0..vw {
            let d = d_out[y * vw + x];
            if d == 0.0 {
                continue;
            }
            for (i, kv) in k.iter().enumerate() {
                tmp[(y + i) * vw + x] += kv * d;
            }
        }
    }
    let mut d_src = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..vw {
            let d = tmp[y * vw + x];
            if d == 0.0 {
                continue;
            }
            for (i, kv) in k.iter().enumerate() {
                d_src[y * w + x + i] += kv * d;
            }
        }
    }
    d_src
}

/// `1 - mean(SSIM)` and its gradient with respect to the rendered image.
/// Returns zero loss on images smaller than the window.
pub fn ssim_loss_and_grad<T: Real>(
    rendered: &[Vector3<T>],
    target: &[Vector3<T>],
    width: usize,
    height: usize,
) -> (f64, Vec<Vector3<T>>) {
    assert_eq!(rendered.len(), width * height);
    assert_eq!(target.len(), rendered.len());
    if width < WINDOW || height < WINDOW {
        return (0.0, vec![Vector3::zeros(); rendered.len()]);
    }
    let k = kernel();
    let vw = width - WINDOW + 1;
    let vh = height - WINDOW + 1;
    let denom = (vw * vh * 3) as f64;

    let mut grad = vec![Vector3::<T>::zeros(); rendered.len()];
    let mut ssim_sum = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = rendered.iter().map(|p| to_f64(p[ch])).collect();
        let y: Vec<f64> = target.iter().map(|p| to_f64(p[ch])).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

        let mu_x = conv_valid(&x, width, height, &k);
        let mu_y = conv_valid(&y, width, height, &k);
        let m_xx = conv_valid(&xx, width, height, &k);
        let m_yy = conv_valid(&yy, width, height, &k);
        let m_xy = conv_valid(&xy, width, height, &k);

        let mut d_mu = vec![0.0; vw * vh];
        let mut d_mxx = vec![0.0; vw * vh];
        let mut d_mxy = vec![0.0; vw * vh];
        for i in 0..vw * vh {
            let (p, q) = (mu_x[i], mu_y[i]);
            let sx = m_xx[i] - p * p;
            let sy = m_yy[i] - q * q;
            let sxy = m_xy[i] - p * q;
            let a1 = 2.0 * p * q + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = p * p + q * q + C1;
            let b2 = sx + sy + C2;
            let s = (a1 * a2) / (b1 * b2);
            ssim_sum += s;

            // dL/dS with L = 1 - mean(S).
            let dl_ds = -1.0 / denom;
            let ds_da1 = s / a1;
            let ds_da2 = s / a2;
            let ds_db1 = -s / b1;
            let ds_db2 = -s / b2;
            // sigma_x^2 enters b2; sigma_xy enters a2.
            let ds_dsx = ds_db2;
            let ds_dsxy = 2.0 * ds_da2;
            // mu_x enters a1, b1 directly and sx, sxy through the products.
            let ds_dmu = ds_da1 * 2.0 * q + ds_db1 * 2.0 * p + ds_dsx * (-2.0 * p)
                + ds_dsxy * (-q);
            d_mu[i] = dl_ds * ds_dmu;
            d_mxx[i] = dl_ds * ds_dsx;
            d_mxy[i] = dl_ds * ds_dsxy;
        }

        let g_mu = conv_adjoint(&d_mu, width, height, &k);
        let g_xx = conv_adjoint(&d_mxx, width, height, &k);
        let g_xy = conv_adjoint(&d_mxy, width, height, &k);
        for i in 0..rendered.len() {
            let g = g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i];
            grad[i][ch] = cast(g);
        }
    }
    (1.0 - ssim_sum / denom, grad)
}
