//! Differentiable CPU splatting rasterizer: depth-sorted alpha-blended
//! forward pass (tiled and brute-force reference) plus the analytic
//! backward pass.

mod backward;
mod prepare;
mod reference;

pub use backward::{render_backward, ScreenGradients};
pub use prepare::{prepare_splats, Splat};
pub use reference::render_reference;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::deformation::PosedGaussian;
use crate::gaussians::Camera;
use crate::scalar::{cast, Real};

/// Pixel tile edge for the tiled forward/backward passes.
pub const TILE_SIZE: usize = 16;
/// Alpha ceiling applied before blending; keeps `1 - alpha` away from zero.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Blending stops once the remaining transmittance drops below this.
pub const EARLY_STOP_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct RenderOutput<T: Real> {
    pub width: usize,
    pub height: usize,
    /// Blended color plus `transmittance * background`, row-major.
    pub image: Vec<Vector3<T>>,
    /// Remaining transmittance per pixel.
    pub transmittance: Vec<T>,
    /// Gaussians blended per pixel (evaluated inside their screen bounds
    /// before the early stop).
    pub contrib_count: Vec<u32>,
}

pub(crate) struct PixelState<T: Real> {
    pub rgb: Vector3<T>,
    pub transmittance: T,
    pub count: u32,
}

/// Front-to-back compositing of one splat into a pixel accumulator.
/// Returns false when the early-stop threshold has been reached.
#[inline]
pub(crate) fn composite<T: Real>(
    splat: &Splat<T>,
    px: T,
    py: T,
    state: &mut PixelState<T>,
) -> bool {
    let dx = px - splat.mean2d.x;
    let dy = py - splat.mean2d.y;
    let q = splat.conic[(0, 0)] * dx * dx
        + (splat.conic[(0, 1)] + splat.conic[(1, 0)]) * dx * dy
        + splat.conic[(1, 1)] * dy * dy;
    let alpha = (splat.opacity * (-q * cast::<T>(0.5)).exp()).min(cast(ALPHA_CLAMP));
    state.rgb += splat.color * (alpha * state.transmittance);
    state.transmittance *= T::one() - alpha;
    state.count += 1;
    state.transmittance >= cast(EARLY_STOP_TRANSMITTANCE)
}

/// Tiled forward render: near-plane and off-screen culling, front-to-back
/// depth order (ties by input index), alpha clamp, early stop.
pub fn render<T: Real>(
    posed: &[PosedGaussian<T>],
    camera: &Camera<T>,
    background: Vector3<T>,
) -> RenderOutput<T> {
    let splats = prepare_splats(posed, camera);
    render_prepared(&splats, camera, background)
}

pub(crate) fn render_prepared<T: Real>(
    splats: &[Splat<T>],
    camera: &Camera<T>,
    background: Vector3<T>,
) -> RenderOutput<T> {
    let (w, h) = (camera.width, camera.height);
    let tiles = tile_lists(splats, w, h);
    let tiles_x = w.div_ceil(TILE_SIZE);

    let blocks: Vec<Vec<PixelState<T>>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile_idx, list)| {
            let (tx, ty) = (tile_idx % tiles_x, tile_idx / tiles_x);
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(w);
            let y1 = (y0 + TILE_SIZE).min(h);
            let mut block = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let mut state = PixelState {
                        rgb: Vector3::zeros(),
                        transmittance: T::one(),
                        count: 0,
                    };
                    let px = cast::<T>(x as f64 + 0.5);
                    let py = cast::<T>(y as f64 + 0.5);
                    for &si in list {
                        let splat = &splats[si as usize];
                        if !splat.covers(x as i64, y as i64) {
                            continue;
                        }
                        if !composite(splat, px, py, &mut state) {
                            break;
                        }
                    }
                    block.push(state);
                }
            }
            block
        })
        .collect();

    let mut out = RenderOutput {
        width: w,
        height: h,
        image: vec![background; w * h],
        transmittance: vec![T::one(); w * h],
        contrib_count: vec![0; w * h],
    };
    for (tile_idx, block) in blocks.into_iter().enumerate() {
        let (tx, ty) = (tile_idx % tiles_x, tile_idx / tiles_x);
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(w);
        let mut it = block.into_iter();
        for y in y0..(y0 + TILE_SIZE).min(h) {
            for x in x0..x1 {
                let state = it.next().expect("block covers tile");
                let i = y * w + x;
                out.image[i] = state.rgb + background * state.transmittance;
                out.transmittance[i] = state.transmittance;
                out.contrib_count[i] = state.count;
            }
        }
    }
    out
}

/// Per-tile lists of splat indices (into the depth-sorted array), in depth
/// order, for tiles intersecting each splat's screen bounds.
pub(crate) fn tile_lists<T: Real>(splats: &[Splat<T>], w: usize, h: usize) -> Vec<Vec<u32>> {
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, splat) in splats.iter().enumerate() {
        let [bx0, by0, bx1, by1] = splat.bounds;
        let tx0 = (bx0.max(0) as usize) / TILE_SIZE;
        let ty0 = (by0.max(0) as usize) / TILE_SIZE;
        let tx1 = ((bx1.min(w as i64 - 1)) as usize) / TILE_SIZE;
        let ty1 = ((by1.min(h as i64 - 1)) as usize) / TILE_SIZE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    tiles
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::logit;
    use nalgebra::{Matrix3, Point3, UnitQuaternion};
    use rand::{Rng, SeedableRng};

    fn test_camera(w: usize, h: usize) -> Camera<f64> {
        Camera::new(
            Matrix3::identity(),
            nalgebra::Vector3::zeros(),
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

    fn splat_at(
        pos: Point3<f64>,
        sigma: f64,
        opacity_logit: f64,
        color: Vector3<f64>,
    ) -> PosedGaussian<f64> {
        PosedGaussian {
            position: pos,
            rotation: UnitQuaternion::identity(),
            scale: Vector3::new(sigma, sigma, sigma),
            opacity: opacity_logit,
            color,
        }
    }

    #[test]
    fn empty_scene_renders_background() {
        let cam = test_camera(8, 6);
        let bg = Vector3::new(0.2, 0.4, 0.6);
        let out = render::<f64>(&[], &cam, bg);
        for p in &out.image {
            assert_eq!(*p, bg);
        }
        for t in &out.transmittance {
            assert_eq!(*t, 1.0);
        }
    }

    #[test]
    fn saturated_gaussian_blends_at_alpha_clamp() {
        let (w, h) = (33, 33);
        let cam = test_camera(w, h);
        // Center of pixel (16,16) is exactly the principal point.
        let color = Vector3::new(0.9, 0.1, 0.3);
        let bg = Vector3::new(0.0, 0.0, 1.0);
        let g = splat_at(Point3::new(0.0, 0.0, 2.0), 0.5, 100.0, color);
        let out = render(&[g], &cam, bg);
        let center = out.image[16 * w + 16];
        let expect = color * ALPHA_CLAMP + bg * (1.0 - ALPHA_CLAMP);
        assert!((center - expect).norm() < 1e-6, "{center:?} vs {expect:?}");
    }

    #[test]
    fn two_overlapping_gaussians_blend_front_to_back() {
        let (w, h) = (33, 33);
        let cam = test_camera(w, h);
        let c1 = Vector3::new(1.0, 0.0, 0.0);
        let c2 = Vector3::new(0.0, 1.0, 0.0);
        let bg = Vector3::new(0.0, 0.0, 1.0);
        // Large flat gaussians covering the center pixel with alpha 0.5:
        // sigmoid(o) = 0.5 at the exact center (exponent ~ 0 there).
        let sigma = 10.0;
        let g1 = splat_at(Point3::new(0.0, 0.0, 2.0), sigma, logit(0.5), c1);
        let g2 = splat_at(Point3::new(0.0, 0.0, 4.0), sigma, logit(0.5), c2);
        // Input order back-to-front; the renderer must sort by depth.
        let out = render(&[g2.clone(), g1.clone()], &cam, bg);
        let center = out.image[16 * w + 16];
        let expect = c1 * 0.5 + c2 * 0.25 + bg * 0.25;
        assert!((center - expect).norm() < 1e-6, "{center:?} vs {expect:?}");
    }

    fn random_scene(
        rng: &mut impl Rng,
        n: usize,
    ) -> (Vec<PosedGaussian<f64>>, Camera<f64>, Vector3<f64>) {
        let cam = test_camera(32, 32);
        let scene = (0..n)
            .map(|_| {
                let q = UnitQuaternion::from_euler_angles(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                );
                PosedGaussian {
                    position: Point3::new(
                        rng.random_range(-0.6..0.6),
                        rng.random_range(-0.6..0.6),
                        rng.random_range(1.5..4.0),
                    ),
                    rotation: q,
                    scale: Vector3::new(
                        rng.random_range(0.02..0.3),
                        rng.random_range(0.02..0.3),
                        rng.random_range(0.02..0.3),
                    ),
                    opacity: rng.random_range(-2.0..4.0),
                    color: Vector3::new(
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                    ),
                }
            })
            .collect();
        let bg = Vector3::new(
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        );
        (scene, cam, bg)
    }

    #[test]
    fn tiled_matches_reference_on_random_scenes() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
        for _ in 0..10 {
            let (scene, cam, bg) = random_scene(&mut rng, 10);
            let tiled = render(&scene, &cam, bg);
            let brute = render_reference(&scene, &cam, bg);
            let mut max_err = 0.0f64;
            for (a, b) in tiled.image.iter().zip(&brute.image) {
                max_err = max_err.max((a - b).amax());
            }
            assert!(max_err < 1e-6, "max pixel error {max_err}");
        }
    }

    #[test]
    fn energy_conservation_weights_plus_transmittance() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(78);
        let (mut scene, cam, _) = random_scene(&mut rng, 12);
        // All-white colors turn the blended sum into the weight sum.
        for g in &mut scene {
            g.color = Vector3::new(1.0, 1.0, 1.0);
        }
        let out = render(&scene, &cam, Vector3::zeros());
        for (p, t) in out.image.iter().zip(&out.transmittance) {
            for c in 0..3 {
                assert!((p[c] + t - 1.0).abs() < 1e-6, "sum {} + {}", p[c], t);
            }
        }
    }

    #[test]
    fn input_order_invariance_with_distinct_depths() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(79);
        let (scene, cam, bg) = random_scene(&mut rng, 15);
        let base = render(&scene, &cam, bg);
        let mut permuted = scene.clone();
        permuted.reverse();
        permuted.swap(0, 7);
        let other = render(&permuted, &cam, bg);
        for (a, b) in base.image.iter().zip(&other.image) {
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn behind_camera_gaussians_are_culled() {
        let cam = test_camera(16, 16);
        let g = splat_at(Point3::new(0.0, 0.0, -3.0), 0.5, 4.0, Vector3::x());
        let bg = Vector3::new(0.1, 0.2, 0.3);
        let out = render(&[g], &cam, bg);
        for p in &out.image {
            assert_eq!(*p, bg);
        }
    }
}
