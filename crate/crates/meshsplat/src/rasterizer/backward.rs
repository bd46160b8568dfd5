//! Analytic backward pass of the tiled renderer.
//!
//! Per pixel the blending is recomputed front-to-back (transmittance and
//! contribution count), then unwound back-to-front recovering each
//! intermediate transmittance from the stored final value; per-splat screen
//! quantities are then chained once to the posed parameters. Per-tile
//! partial sums are reduced in fixed tile order so results do not depend on
//! the thread schedule.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::deformation::PosedGaussian;
use crate::error::{Error, Result};
use crate::gaussians::quat::rotation_partials;
use crate::gaussians::Camera;
use crate::scalar::{cast, Real};

use super::prepare::{prepare_splats, Splat};
use super::{tile_lists, ALPHA_CLAMP, EARLY_STOP_TRANSMITTANCE, TILE_SIZE};

/// Gradients with respect to the posed Gaussians (same cardinality as the
/// render input; culled Gaussians keep zeros).
#[derive(Debug, Clone)]
pub struct ScreenGradients<T: Real> {
    pub position: Vec<Vector3<T>>,
    /// w.r.t. the posed unit quaternion, free 4-vector (wxyz).
    pub rotation: Vec<Vector4<T>>,
    /// w.r.t. the activated posed scale.
    pub scale: Vec<Vector3<T>>,
    /// w.r.t. the opacity logit.
    pub opacity: Vec<T>,
    pub color: Vec<Vector3<T>>,
    /// Pixel-space gradient of the screen mean; feeds densification stats.
    pub mean2d: Vec<Vector2<T>>,
    /// 3-sigma screen radius in pixels (zero for culled Gaussians).
    pub radii: Vec<T>,
}

impl<T: Real> ScreenGradients<T> {
    fn zeros(n: usize) -> Self {
        Self {
            position: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            scale: vec![Vector3::zeros(); n],
            opacity: vec![T::zero(); n],
            color: vec![Vector3::zeros(); n],
            mean2d: vec![Vector2::zeros(); n],
            radii: vec![T::zero(); n],
        }
    }
}

/// Per-splat accumulator of pixel-level derivatives.
#[derive(Clone, Copy)]
struct SplatAccum<T: Real> {
    d_mean2d: Vector2<T>,
    d_conic: Matrix2<T>,
    d_opacity: T,
    d_color: Vector3<T>,
}

impl<T: Real> SplatAccum<T> {
    fn zero() -> Self {
        Self {
            d_mean2d: Vector2::zeros(),
            d_conic: Matrix2::zeros(),
            d_opacity: T::zero(),
            d_color: Vector3::zeros(),
        }
    }

    fn add(&mut self, other: &Self) {
        self.d_mean2d += other.d_mean2d;
        self.d_conic += other.d_conic;
        self.d_opacity += other.d_opacity;
        self.d_color += other.d_color;
    }
}

/// Backward of [`super::render`] for the scalar objective
/// `L = sum(grad_image . image)`.
pub fn render_backward<T: Real>(
    posed: &[PosedGaussian<T>],
    camera: &Camera<T>,
    background: Vector3<T>,
    grad_image: &[Vector3<T>],
) -> Result<ScreenGradients<T>> {
    let (w, h) = (camera.width, camera.height);
    assert_eq!(grad_image.len(), w * h, "grad_image must match resolution");
    let splats = prepare_splats(posed, camera);
    let tiles = tile_lists(&splats, w, h);
    let tiles_x = w.div_ceil(TILE_SIZE);

    // Pixel-level accumulation, parallel over tiles.
    let tile_accums: Vec<Vec<SplatAccum<T>>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile_idx, list)| {
            let mut local = vec![SplatAccum::zero(); list.len()];
            let (tx, ty) = (tile_idx % tiles_x, tile_idx / tiles_x);
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(w);
            let y1 = (y0 + TILE_SIZE).min(h);
            let mut contributing: Vec<(usize, T, T, T, T)> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    backward_pixel(
                        &splats,
                        list,
                        x,
                        y,
                        grad_image[y * w + x],
                        background,
                        &mut local,
                        &mut contributing,
                    );
                }
            }
            local
        })
        .collect();

    // Fixed-order reduction into per-splat accumulators.
    let mut accums = vec![SplatAccum::<T>::zero(); splats.len()];
    for (list, locals) in tiles.iter().zip(&tile_accums) {
        for (&si, local) in list.iter().zip(locals) {
            accums[si as usize].add(local);
        }
    }

    // One chain per splat from screen quantities to posed parameters.
    let per_splat: Vec<(usize, SplatGrad<T>)> = splats
        .par_iter()
        .zip(&accums)
        .map(|(splat, acc)| (splat.index, chain_splat(splat, acc, camera)))
        .collect();

    let mut out = ScreenGradients::zeros(posed.len());
    for splat in &splats {
        out.radii[splat.index] = splat.radius;
    }
    for (index, g) in per_splat {
        out.position[index] = g.position;
        out.rotation[index] = g.rotation;
        out.scale[index] = g.scale;
        out.opacity[index] = g.opacity;
        out.color[index] = g.color;
        out.mean2d[index] = g.mean2d;
    }

    for (i, p) in out.position.iter().enumerate() {
        let finite = p.iter().all(|v| v.is_finite())
            && out.rotation[i].iter().all(|v| v.is_finite())
            && out.scale[i].iter().all(|v| v.is_finite())
            && out.opacity[i].is_finite()
            && out.color[i].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteGradient(i));
        }
    }
    Ok(out)
}

/// Recomputes one pixel's blending and accumulates its gradient
/// contributions into the tile-local splat accumulators.
#[allow(clippy::too_many_arguments)]
fn backward_pixel<T: Real>(
    splats: &[Splat<T>],
    list: &[u32],
    x: usize,
    y: usize,
    grad_rgb: Vector3<T>,
    background: Vector3<T>,
    local: &mut [SplatAccum<T>],
    contributing: &mut Vec<(usize, T, T, T, T)>,
) {
    let px = cast::<T>(x as f64 + 0.5);
    let py = cast::<T>(y as f64 + 0.5);
    let half = cast::<T>(0.5);
    let clamp = cast::<T>(ALPHA_CLAMP);
    let stop = cast::<T>(EARLY_STOP_TRANSMITTANCE);

    // Forward recomputation: collect (list position, alpha, gauss value,
    // dx, dy) for the contributing prefix.
    contributing.clear();
    let mut transmittance = T::one();
    for (li, &si) in list.iter().enumerate() {
        let splat = &splats[si as usize];
        if !splat.covers(x as i64, y as i64) {
            continue;
        }
        let dx = px - splat.mean2d.x;
        let dy = py - splat.mean2d.y;
        let q = splat.conic[(0, 0)] * dx * dx
            + (splat.conic[(0, 1)] + splat.conic[(1, 0)]) * dx * dy
            + splat.conic[(1, 1)] * dy * dy;
        let gauss = (-q * half).exp();
        let alpha = (splat.opacity * gauss).min(clamp);
        contributing.push((li, alpha, gauss, dx, dy));
        transmittance *= T::one() - alpha;
        if transmittance < stop {
            break;
        }
    }

    // Backward sweep, recovering T_i = T_running / (1 - alpha_i).
    let mut t_running = transmittance;
    let mut suffix = background * transmittance;
    for &(li, alpha, gauss, dx, dy) in contributing.iter().rev() {
        let splat = &splats[list[li] as usize];
        let one_minus = T::one() - alpha;
        let t_i = t_running / one_minus;

        let acc = &mut local[li];
        // dL/dcolor = g * alpha * T_i
        acc.d_color += grad_rgb * (alpha * t_i);
        // dL/dalpha = sum_ch g_ch * (c_ch * T_i - suffix_ch / (1 - alpha))
        let d_alpha = grad_rgb.dot(&(splat.color * t_i - suffix / one_minus));

        if splat.opacity * gauss < clamp {
            // alpha = sigmoid(o) * G
            let d_gauss = d_alpha * splat.opacity;
            // opacity here is already sigmoid(o); d sigmoid = s * (1 - s)
            acc.d_opacity += d_alpha * gauss * splat.opacity * (T::one() - splat.opacity);
            let d_q = -d_gauss * gauss * half;
            // q = d^T A d with A symmetric
            acc.d_conic[(0, 0)] += d_q * dx * dx;
            acc.d_conic[(0, 1)] += d_q * dx * dy;
            acc.d_conic[(1, 0)] += d_q * dy * dx;
            acc.d_conic[(1, 1)] += d_q * dy * dy;
            // dq/d mean2d = -2 A d  (A symmetric)
            let ad = splat.conic * Vector2::new(dx, dy);
            acc.d_mean2d += ad * (-(d_q + d_q));
        }

        suffix += splat.color * (alpha * t_i);
        t_running = t_i;
    }
}

struct SplatGrad<T: Real> {
    position: Vector3<T>,
    rotation: Vector4<T>,
    scale: Vector3<T>,
    opacity: T,
    color: Vector3<T>,
    mean2d: Vector2<T>,
}

/// Chains accumulated screen-space derivatives of one splat to the posed
/// mean, rotation, scale, opacity logit, and color.
fn chain_splat<T: Real>(
    splat: &Splat<T>,
    acc: &SplatAccum<T>,
    camera: &Camera<T>,
) -> SplatGrad<T> {
    // conic = cov2d^-1: dL/dcov2d = -A^T dA A^T (A symmetric).
    let a = splat.conic;
    let d_cov2d = -(a * acc.d_conic * a);

    // cov2d = M cov3d M^T + floor: dM = 2 * dcov2d * M * cov3d (dcov2d sym).
    let d_m: Matrix2x3<T> = (d_cov2d + d_cov2d.transpose()) * splat.m * splat.cov3d;
    let d_cov3d: Matrix3<T> = splat.m.transpose() * d_cov2d * splat.m;

    // M = J * W_rot.
    let d_j: Matrix2x3<T> = d_m * camera.rotation.transpose();

    // J entries depend on the camera-space point.
    let (tx, ty, tz) = (splat.t_cam.x, splat.t_cam.y, splat.t_cam.z);
    let zi = T::one() / tz;
    let zi2 = zi * zi;
    let zi3 = zi2 * zi;
    let two = T::one() + T::one();
    let mut d_t = Vector3::new(
        d_j[(0, 2)] * (-camera.fx * zi2),
        d_j[(1, 2)] * (-camera.fy * zi2),
        d_j[(0, 0)] * (-camera.fx * zi2)
            + d_j[(1, 1)] * (-camera.fy * zi2)
            + d_j[(0, 2)] * (two * camera.fx * tx * zi3)
            + d_j[(1, 2)] * (two * camera.fy * ty * zi3),
    );
    // Projection of the mean: J is exactly d mean2d / d t.
    d_t += splat.jacobian.transpose() * acc.d_mean2d;

    let position = camera.rotation.transpose() * d_t;

    // cov3d = R D R^T with D = diag(scale^2); splat.cov3d was built from the
    // posed rotation/scale, reconstructed here from the stored pieces.
    let d_sym = d_cov3d;
    let r = splat.rot3d;
    let d_r = (d_sym + d_sym.transpose()) * r * Matrix3::from_diagonal(&splat.scale3d.component_mul(&splat.scale3d));
    let rt_dr = r.transpose() * d_sym * r;
    let scale = Vector3::new(
        two * splat.scale3d.x * rt_dr[(0, 0)],
        two * splat.scale3d.y * rt_dr[(1, 1)],
        two * splat.scale3d.z * rt_dr[(2, 2)],
    );
    let parts = rotation_partials(&splat.unit_quat);
    let mut rotation = Vector4::zeros();
    for c in 0..4 {
        rotation[c] = d_r.component_mul(&parts[c]).sum();
    }

    SplatGrad {
        position,
        rotation,
        scale,
        opacity: acc.d_opacity,
        color: acc.d_color,
        mean2d: acc.d_mean2d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::render;
    use nalgebra::{Matrix3, Point3, UnitQuaternion};
    use rand::{Rng, SeedableRng};

    fn test_camera(w: usize, h: usize) -> Camera<f64> {
        Camera::new(
            Matrix3::identity(),
            Vector3::zeros(),
            60.0,
            60.0,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
            0.01,
            1e6,
        )
        .unwrap()
    }

    fn random_scene(
        rng: &mut impl Rng,
        n: usize,
    ) -> (Vec<PosedGaussian<f64>>, Camera<f64>, Vector3<f64>) {
        let cam = test_camera(32, 32);
        let scene = (0..n)
            .map(|_| PosedGaussian {
                position: Point3::new(
                    rng.random_range(-0.7..0.7),
                    rng.random_range(-0.7..0.7),
                    rng.random_range(1.5..4.5),
                ),
                rotation: UnitQuaternion::from_euler_angles(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
                scale: Vector3::new(
                    rng.random_range(0.05..0.25),
                    rng.random_range(0.05..0.25),
                    rng.random_range(0.05..0.25),
                ),
                // Moderate opacities keep the early-stop threshold out of
                // finite-difference range for typical scenes.
                opacity: rng.random_range(-2.5..0.5),
                color: Vector3::new(
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                ),
            })
            .collect();
        let bg = Vector3::new(
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        );
        (scene, cam, bg)
    }

    fn loss(
        scene: &[PosedGaussian<f64>],
        cam: &Camera<f64>,
        bg: Vector3<f64>,
        g: &[Vector3<f64>],
    ) -> f64 {
        let out = render(scene, cam, bg);
        out.image.iter().zip(g).map(|(p, w)| p.dot(w)).sum()
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1234);
        let (scene, cam, bg) = random_scene(&mut rng, 8);
        let grad_image: Vec<Vector3<f64>> = (0..cam.width * cam.height)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let analytic = render_backward(&scene, &cam, bg, &grad_image).unwrap();
        let h = 1e-4;
        let mut checked = 0usize;
        let mut failed = 0usize;
        let mut check = |ana: f64, fd: f64, what: String| {
            let denom = ana.abs().max(fd.abs());
            checked += 1;
            if denom > 1e-8 && (ana - fd).abs() / denom > 1e-3 {
                failed += 1;
                eprintln!("{what}: analytic {ana} vs fd {fd}");
            }
        };

        for i in 0..scene.len() {
            for c in 0..3 {
                let mut plus = scene.clone();
                plus[i].position[c] += h;
                let mut minus = scene.clone();
                minus[i].position[c] -= h;
                let fd =
                    (loss(&plus, &cam, bg, &grad_image) - loss(&minus, &cam, bg, &grad_image))
                        / (2.0 * h);
                check(analytic.position[i][c], fd, format!("pos[{i}][{c}]"));
            }
            for c in 0..3 {
                let mut plus = scene.clone();
                plus[i].scale[c] += h;
                let mut minus = scene.clone();
                minus[i].scale[c] -= h;
                let fd =
                    (loss(&plus, &cam, bg, &grad_image) - loss(&minus, &cam, bg, &grad_image))
                        / (2.0 * h);
                check(analytic.scale[i][c], fd, format!("scale[{i}][{c}]"));
            }
            {
                let mut plus = scene.clone();
                plus[i].opacity += h;
                let mut minus = scene.clone();
                minus[i].opacity -= h;
                let fd =
                    (loss(&plus, &cam, bg, &grad_image) - loss(&minus, &cam, bg, &grad_image))
                        / (2.0 * h);
                check(analytic.opacity[i], fd, format!("opacity[{i}]"));
            }
            for c in 0..3 {
                let mut plus = scene.clone();
                plus[i].color[c] += h;
                let mut minus = scene.clone();
                minus[i].color[c] -= h;
                let fd =
                    (loss(&plus, &cam, bg, &grad_image) - loss(&minus, &cam, bg, &grad_image))
                        / (2.0 * h);
                check(analytic.color[i][c], fd, format!("color[{i}][{c}]"));
            }
            // Rotation: perturb in the tangent space and renormalize.
            let q0 = crate::gaussians::quat::wxyz(&scene[i].rotation.into_inner());
            for c in 0..4 {
                let mut dir = Vector4::zeros();
                dir[c] = 1.0;
                let dir = dir - q0 * q0.dot(&dir);
                if dir.norm() < 1e-9 {
                    continue;
                }
                let dir = dir.normalize();
                let perturbed = |sign: f64| {
                    let v = q0 + dir * (sign * h);
                    let mut s = scene.clone();
                    s[i].rotation = UnitQuaternion::from_quaternion(
                        nalgebra::Quaternion::new(v.x, v.y, v.z, v.w),
                    );
                    s
                };
                let fd = (loss(&perturbed(1.0), &cam, bg, &grad_image)
                    - loss(&perturbed(-1.0), &cam, bg, &grad_image))
                    / (2.0 * h);
                let ana = analytic.rotation[i].dot(&dir);
                check(ana, fd, format!("rot[{i}] dir {c}"));
            }
        }
        assert!(checked > 100);
        assert!(
            failed * 100 <= checked,
            "{failed} of {checked} gradient coordinates off"
        );
    }

    #[test]
    fn zero_grad_image_gives_zero_gradients() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5678);
        let (scene, cam, bg) = random_scene(&mut rng, 5);
        let zeros = vec![Vector3::zeros(); cam.width * cam.height];
        let grads = render_backward(&scene, &cam, bg, &zeros).unwrap();
        for i in 0..scene.len() {
            assert_eq!(grads.position[i], Vector3::zeros());
            assert_eq!(grads.rotation[i], Vector4::zeros());
            assert_eq!(grads.scale[i], Vector3::zeros());
            assert_eq!(grads.opacity[i], 0.0);
            assert_eq!(grads.color[i], Vector3::zeros());
        }
    }

    #[test]
    fn offscreen_gaussian_gets_zero_gradient() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(91);
        let (mut scene, cam, bg) = random_scene(&mut rng, 3);
        scene[0].position = Point3::new(50.0, 0.0, 2.0); // far off frame
        let grad_image = vec![Vector3::new(1.0, 1.0, 1.0); cam.width * cam.height];
        let grads = render_backward(&scene, &cam, bg, &grad_image).unwrap();
        assert_eq!(grads.position[0], Vector3::zeros());
        assert_eq!(grads.color[0], Vector3::zeros());
    }
}
