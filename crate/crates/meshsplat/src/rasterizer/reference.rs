//! Brute-force per-pixel renderer: the full depth-sorted splat list is
//! walked for every pixel. Kept as the equivalence oracle for the tiled
//! path and as the ground-truth renderer for synthetic scenes.

use nalgebra::Vector3;

use crate::deformation::PosedGaussian;
use crate::gaussians::Camera;
use crate::scalar::{cast, Real};

use super::prepare::prepare_splats;
use super::{composite, PixelState, RenderOutput};

pub fn render_reference<T: Real>(
    posed: &[PosedGaussian<T>],
    camera: &Camera<T>,
    background: Vector3<T>,
) -> RenderOutput<T> {
    let splats = prepare_splats(posed, camera);
    let (w, h) = (camera.width, camera.height);
    let mut out = RenderOutput {
        width: w,
        height: h,
        image: vec![background; w * h],
        transmittance: vec![T::one(); w * h],
        contrib_count: vec![0; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let mut state = PixelState {
                rgb: Vector3::zeros(),
                transmittance: T::one(),
                count: 0,
            };
            let px = cast::<T>(x as f64 + 0.5);
            let py = cast::<T>(y as f64 + 0.5);
            for splat in &splats {
                if !splat.covers(x as i64, y as i64) {
                    continue;
                }
                if !composite(splat, px, py, &mut state) {
                    break;
                }
            }
            let i = y * w + x;
            out.image[i] = state.rgb + background * state.transmittance;
            out.transmittance[i] = state.transmittance;
            out.contrib_count[i] = state.count;
        }
    }
    out
}
