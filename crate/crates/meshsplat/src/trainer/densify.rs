//! Densification: clone small high-gradient Gaussians, split large ones
//! into two children re-embedded by the inverse solve, prune transparent or
//! oversized ones. Optimizer rows follow the model rows in lockstep.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::embedding::{embedded_position, solve_embedding, BaryDelta, Embedding, SolveOptions};
use crate::error::Result;
use crate::gaussians::Gaussian;
use crate::geometry::TriangleMesh;
use crate::model::{GradientSet, SurfaceModel};
use crate::scalar::{cast, sigmoid, to_f64, Real};

use super::adam::OptimizerState;
use super::config::TrainConfig;

/// Running densification statistics between events.
#[derive(Debug, Clone)]
pub struct DensifyAccum<T: Real> {
    grad_sum: Vec<T>,
    seen: Vec<u32>,
    max_radius: Vec<T>,
}

impl<T: Real> DensifyAccum<T> {
    pub fn new(rows: usize) -> Self {
        Self {
            grad_sum: vec![T::zero(); rows],
            seen: vec![0; rows],
            max_radius: vec![T::zero(); rows],
        }
    }

    pub fn reset(&mut self, rows: usize) {
        *self = Self::new(rows);
    }

    /// Accumulates the screen-space positional gradient norm (in NDC units)
    /// and the maximum screen radius for every visible Gaussian.
    pub fn observe(&mut self, grads: &GradientSet<T>, width: usize, height: usize) {
        let hw = cast::<T>(width as f64 * 0.5);
        let hh = cast::<T>(height as f64 * 0.5);
        for i in 0..self.grad_sum.len() {
            if grads.radii[i] > T::zero() {
                let gx = grads.mean2d[i].x * hw;
                let gy = grads.mean2d[i].y * hh;
                self.grad_sum[i] += (gx * gx + gy * gy).sqrt();
                self.seen[i] += 1;
                self.max_radius[i] = self.max_radius[i].max(grads.radii[i]);
            }
        }
    }

    pub fn mean_grad(&self, i: usize) -> T {
        if self.seen[i] == 0 {
            T::zero()
        } else {
            self.grad_sum[i] / cast(self.seen[i] as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyStats {
    pub before: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub after: usize,
}

/// One densify/prune event. Clone and split candidates come from the
/// accumulated gradient statistic; pruning removes transparent or
/// screen-oversized Gaussians. New optimizer rows start at zero.
pub fn densify_and_prune<T: Real>(
    model: &mut SurfaceModel<T>,
    opt: &mut OptimizerState<T>,
    accum: &DensifyAccum<T>,
    cano: &TriangleMesh<T>,
    cfg: &TrainConfig,
    scene_extent: f64,
    rng: &mut ChaCha12Rng,
) -> Result<DensifyStats> {
    let n = model.len();
    let mut stats = DensifyStats {
        before: n,
        ..Default::default()
    };
    let tau = cast::<T>(cfg.tau_grad);
    let dense_limit = cast::<T>(cfg.percent_dense * scene_extent);
    let solve_opts = SolveOptions::default();

    let mut keep = vec![true; n];
    let mut new_embeddings: Vec<Embedding<T>> = Vec::new();
    let mut new_deltas: Vec<BaryDelta<T>> = Vec::new();
    let mut new_gaussians: Vec<Gaussian<T>> = Vec::new();

    for i in 0..n {
        if n + new_embeddings.len() >= cfg.max_gaussians {
            break;
        }
        if accum.mean_grad(i) <= tau {
            continue;
        }
        let g = &model.gaussians[i];
        let scale = g.activated_scale();
        let (effective, _) = model.effective_embedding(i);
        if scale.max() <= dense_limit {
            // Clone: everything copied verbatim.
            new_embeddings.push(model.embeddings[i]);
            new_deltas.push(model.deltas[i]);
            new_gaussians.push(g.clone());
            stats.cloned += 1;
        } else {
            // Split: two samples drawn from the canonical Gaussian, each
            // re-embedded with the parent as hint.
            keep[i] = false;
            let center = embedded_position(cano, &effective)?;
            let rot = g.rotation.to_rotation_matrix().into_inner();
            let shrink = cast::<T>(cfg.split_scale_factor.ln());
            for _ in 0..2 {
                let xi = Vector3::new(
                    cast::<T>(rng.sample::<f64, _>(StandardNormal)),
                    cast::<T>(rng.sample::<f64, _>(StandardNormal)),
                    cast::<T>(rng.sample::<f64, _>(StandardNormal)),
                );
                let sample = center + rot * scale.component_mul(&xi);
                let solved = solve_embedding(cano, sample, Some(effective), solve_opts)?;
                new_embeddings.push(solved.embedding);
                new_deltas.push(BaryDelta::zero());
                let mut child = g.clone();
                child.log_scale -= Vector3::new(shrink, shrink, shrink);
                new_gaussians.push(child);
            }
            stats.split += 1;
        }
    }

    // Prune originals by opacity and accumulated screen radius.
    let prune_op = cast::<T>(cfg.prune_opacity);
    let prune_radius = cast::<T>(cfg.prune_radius_px);
    for i in 0..n {
        if keep[i]
            && (sigmoid(model.gaussians[i].opacity) < prune_op
                || accum.max_radius[i] > prune_radius)
        {
            keep[i] = false;
            stats.pruned += 1;
        }
    }

    retain_in_place(&mut model.embeddings, &keep);
    retain_in_place(&mut model.deltas, &keep);
    retain_in_place(&mut model.gaussians, &keep);
    opt.retain_rows(&keep);

    model.embeddings.extend(new_embeddings);
    model.deltas.extend(new_deltas);
    model.gaussians.extend(new_gaussians);
    opt.push_zero_rows(model.len() - opt.embedding.rows());

    stats.after = model.len();
    debug_assert!(model.consistent() && opt.lockstep(model.len()));
    let _ = to_f64(tau);
    Ok(stats)
}

fn retain_in_place<X>(items: &mut Vec<X>, keep: &[bool]) {
    let mut i = 0usize;
    items.retain(|_| {
        let k = keep[i];
        i += 1;
        k
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;
    use nalgebra::UnitQuaternion;
    use rand::SeedableRng;

    fn base_model(mesh: &TriangleMesh<f64>, n: usize) -> SurfaceModel<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        SurfaceModel {
            embeddings: (0..n)
                .map(|_| {
                    Embedding::new(
                        rng.random_range(0..mesh.num_faces()),
                        rng.random_range(0.2..0.4),
                        rng.random_range(0.2..0.4),
                        0.0,
                    )
                })
                .collect(),
            deltas: vec![BaryDelta::zero(); n],
            gaussians: (0..n)
                .map(|_| Gaussian {
                    rotation: UnitQuaternion::identity(),
                    log_scale: Vector3::new(-3.0, -3.0, -3.0),
                    opacity: 1.0,
                    color: Vector3::new(0.5, 0.5, 0.5),
                })
                .collect(),
        }
    }

    fn quiet_accum(n: usize) -> DensifyAccum<f64> {
        let mut a = DensifyAccum::new(n);
        for i in 0..n {
            a.seen[i] = 1;
        }
        a
    }

    #[test]
    fn no_gradients_only_prunes() {
        let mesh = icosphere::<f64>(1);
        let mut model = base_model(&mesh, 10);
        model.gaussians[3].opacity = -10.0; // sigmoid ~ 4.5e-5 < 0.005
        let mut opt = OptimizerState::new(10);
        let accum = quiet_accum(10);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let stats =
            densify_and_prune(&mut model, &mut opt, &accum, &mesh, &cfg, 1.0, &mut rng).unwrap();
        assert_eq!(stats.cloned + stats.split, 0);
        assert_eq!(stats.pruned, 1);
        assert_eq!(model.len(), 9);
        assert!(opt.lockstep(9));
    }

    #[test]
    fn split_replaces_parent_with_two_children_near_it() {
        let mesh = icosphere::<f64>(2);
        let mut model = base_model(&mesh, 4);
        // Large gaussian: exp(-1.2) ~ 0.3 > percent_dense * extent = 0.01.
        model.gaussians[2].log_scale = Vector3::new(-1.2, -1.4, -1.3);
        let mut opt = OptimizerState::new(4);
        opt.rotation.m[2 * 4] = 0.7; // parent state must not survive the split
        let mut accum = quiet_accum(4);
        accum.grad_sum[2] = 1.0; // mean grad 1.0 > tau
        let cfg = TrainConfig::default();
        let parent_center =
            embedded_position(&mesh, &model.embeddings[2]).unwrap();
        let parent_sigma = model.gaussians[2].activated_scale().max();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let stats =
            densify_and_prune(&mut model, &mut opt, &accum, &mesh, &cfg, 1.0, &mut rng).unwrap();
        assert_eq!(stats.split, 1);
        assert_eq!(model.len(), 5); // 4 - 1 parent + 2 children
        assert!(opt.lockstep(5));
        let extent = 1.0;
        for child in &model.embeddings[3..] {
            let p = embedded_position(&mesh, child).unwrap();
            let dist = (p - parent_center).norm();
            assert!(dist < 3.0 * parent_sigma * 3.0f64.sqrt(), "child {dist} away");
            // The inverse solve keeps the sample on-model.
            assert!(child.min_margin() > -1e-9);
            let _ = extent;
        }
        for child in &model.gaussians[3..] {
            let expect = -1.2 - 1.6f64.ln();
            assert!((child.log_scale.x - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn clone_duplicates_small_high_gradient_gaussian() {
        let mesh = icosphere::<f64>(1);
        let mut model = base_model(&mesh, 3);
        // Small enough to clone: exp(-5.5) ~ 0.004 < percent_dense * extent.
        model.gaussians[1].log_scale = Vector3::new(-5.5, -5.5, -5.5);
        let mut opt = OptimizerState::new(3);
        let mut accum = quiet_accum(3);
        accum.grad_sum[1] = 0.5;
        let cfg = TrainConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let stats =
            densify_and_prune(&mut model, &mut opt, &accum, &mesh, &cfg, 1.0, &mut rng).unwrap();
        assert_eq!(stats.cloned, 1);
        assert_eq!(model.len(), 4);
        assert_eq!(model.embeddings[3], model.embeddings[1]);
        assert_eq!(model.gaussians[3], model.gaussians[1]);
    }

    #[test]
    fn oversized_screen_radius_is_pruned() {
        let mesh = icosphere::<f64>(1);
        let mut model = base_model(&mesh, 2);
        let mut opt = OptimizerState::new(2);
        let mut accum = quiet_accum(2);
        accum.max_radius[0] = 100.0; // beyond prune_radius_px = 40
        let cfg = TrainConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let stats =
            densify_and_prune(&mut model, &mut opt, &accum, &mesh, &cfg, 1.0, &mut rng).unwrap();
        assert_eq!(stats.pruned, 1);
        assert_eq!(model.len(), 1);
    }
}
