//! Lifted optimization loop: loss assembly, per-parameter-group Adam,
//! batched walking with optimizer-state reset, densification, opacity
//! resets, and schedules.

mod adam;
mod config;
mod densify;
mod loss;
pub mod ssim;

pub use adam::{OptimizerState, ParamGroup, BETA1, BETA2, EPSILON};
pub use config::{TrainConfig, WalkMode};
pub use densify::{densify_and_prune, DensifyAccum, DensifyStats};
pub use loss::{photometric_loss, psnr, scaling_regularizer, PhotometricLoss};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

use crate::embedding::{walk_on_triangles, BaryDelta, Embedding, WalkStatus};
use crate::error::{Error, Result};
use crate::gaussians::Gaussian;
use crate::geometry::TriangleMesh;
use crate::io::Dataset;
use crate::model::{backward_from_screen, SurfaceModel};
use crate::scalar::{cast, logit, to_f64, Real};

/// "Opacity reset to zero": sigmoid(-9.21) is about 1e-4.
pub const OPACITY_RESET_LOGIT: f64 = -9.21;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss_l1: f64,
    pub loss_ssim: f64,
    pub loss_scaling: f64,
    pub n_gaussians: usize,
    pub psnr_val: Option<f64>,
}

/// CSV with a comment line documenting the perceptual-term substitution.
pub fn metrics_to_csv(rows: &[MetricsRow], lambda_l: f64, use_ssim: bool) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# loss_ssim is an SSIM term at weight lambda_l={lambda_l} standing in for the perceptual loss; {}\n",
        if use_ssim { "enabled" } else { "disabled this run" }
    ));
    out.push_str("iter,loss_l1,loss_ssim,loss_scaling,n_gaussians,psnr_val\n");
    for r in rows {
        let psnr = r.psnr_val.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter, r.loss_l1, r.loss_ssim, r.loss_scaling, r.n_gaussians, psnr
        ));
    }
    out
}

#[derive(Debug)]
pub struct TrainResult<T: Real> {
    pub model: SurfaceModel<T>,
    pub metrics: Vec<MetricsRow>,
    pub final_psnr: Option<f64>,
}

#[derive(Debug, Default)]
pub struct WalkSummary {
    /// Embeddings that changed faces (their optimizer rows were reset).
    pub transferred: Vec<usize>,
    pub boundary_hits: usize,
    pub failures: Vec<(usize, Error)>,
}

/// Area-proportional face choice with uniform barycentric coordinates and
/// zero displacement.
pub fn sample_embeddings<T: Real>(
    mesh: &TriangleMesh<T>,
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<Embedding<T>> {
    let cumulative = mesh.cumulative_areas();
    let total = to_f64(cumulative.last().copied().unwrap_or_default());
    let mut embeddings = Vec::with_capacity(count);
    for _ in 0..count {
        let target = cast::<T>(rng.random_range(0.0..total));
        let k = cumulative
            .partition_point(|&a| a <= target)
            .saturating_sub(1)
            .min(mesh.num_faces() - 1);
        let r1: f64 = rng.random_range(0.0..1.0);
        let r2: f64 = rng.random_range(0.0..1.0);
        let sq = r1.sqrt();
        embeddings.push(Embedding::new(
            k,
            cast(1.0 - sq),
            cast(sq * (1.0 - r2)),
            T::zero(),
        ));
    }
    embeddings
}

/// Random initialization on the canonical mesh: faces sampled by area,
/// uniform barycentric coordinates, zero displacement; isotropic scales
/// from the mean distance to the three nearest initial positions.
pub fn initialize_model<T: Real>(
    mesh: &TriangleMesh<T>,
    init_count: usize,
    rng: &mut ChaCha12Rng,
) -> SurfaceModel<T> {
    let embeddings = sample_embeddings(mesh, init_count, rng);

    let positions: Vec<_> = embeddings
        .iter()
        .map(|e| crate::embedding::embedded_position(mesh, e).expect("sampled embedding is valid"))
        .collect();
    let spacings = mean_knn3_distance(&positions);
    let floor = to_f64(mesh.mean_edge_length()) * 1e-3 + 1e-12;

    let gaussians = spacings
        .iter()
        .map(|&s| {
            let iso = cast::<T>(s.max(floor).ln());
            Gaussian {
                rotation: UnitQuaternion::identity(),
                log_scale: Vector3::new(iso, iso, iso),
                opacity: logit(cast::<T>(0.1)),
                color: Vector3::new(cast(0.5), cast(0.5), cast(0.5)),
            }
        })
        .collect();
    SurfaceModel {
        deltas: vec![BaryDelta::zero(); embeddings.len()],
        embeddings,
        gaussians,
    }
}

fn mean_knn3_distance<T: Real>(positions: &[nalgebra::Point3<T>]) -> Vec<f64> {
    use rayon::prelude::*;
    let pts: Vec<[f64; 3]> = positions
        .iter()
        .map(|p| [to_f64(p.x), to_f64(p.y), to_f64(p.z)])
        .collect();
    (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in pts.iter().enumerate() {
                if i == j {
                    continue;
                }
                let p = &pts[i];
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d2 < best[2] {
                    best[2] = d2;
                    if best[2] < best[1] {
                        best.swap(1, 2);
                    }
                    if best[1] < best[0] {
                        best.swap(0, 1);
                    }
                }
            }
            let mut sum = 0.0;
            let mut n = 0usize;
            for b in best {
                if b.is_finite() {
                    sum += b.sqrt();
                    n += 1;
                }
            }
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect()
}

/// Routes each embedding's accumulated delta through the triangle walk,
/// absorbing deltas into the stored coordinates. Optimizer rows of
/// embeddings that changed faces are zeroed; all deltas reset.
pub fn apply_walking<T: Real>(
    model: &mut SurfaceModel<T>,
    mesh: &TriangleMesh<T>,
    opt: &mut OptimizerState<T>,
) -> WalkSummary {
    let mut summary = WalkSummary::default();
    for i in 0..model.len() {
        let e = model.embeddings[i];
        let d = model.deltas[i];
        match walk_on_triangles(mesh, e.k, e.u, e.v, d.du, d.dv) {
            Ok(r) => {
                if r.status == WalkStatus::BoundaryClamped {
                    summary.boundary_hits += 1;
                }
                if r.k != e.k {
                    summary.transferred.push(i);
                    opt.embedding.zero_row(i);
                }
                model.embeddings[i] = Embedding::new(r.k, r.u, r.v, e.d + d.dd);
                model.deltas[i] = BaryDelta::zero();
            }
            Err(err) => summary.failures.push((i, err)),
        }
    }
    summary
}

/// Mean validation PSNR: renders over black and compares against the
/// masked targets.
pub fn validate_psnr<T: Real>(
    model: &SurfaceModel<T>,
    dataset: &Dataset<T>,
    val_ids: &[usize],
) -> Result<f64> {
    if val_ids.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for &id in val_ids {
        let frame = &dataset.frames[id];
        let posed = model.pose_all(&frame.mesh, &frame.field)?;
        let out = crate::rasterizer::render(&posed, &frame.camera, Vector3::zeros());
        sum += psnr(&out.image, &frame.image, frame.mask.as_deref());
    }
    Ok(sum / val_ids.len() as f64)
}

struct GroupBuffers<T> {
    params: Vec<T>,
    grads: Vec<T>,
}

impl<T: Real> GroupBuffers<T> {
    fn new() -> Self {
        Self {
            params: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn fill(&mut self, n: usize, width: usize) {
        self.params.clear();
        self.params.resize(n * width, T::zero());
        self.grads.clear();
        self.grads.resize(n * width, T::zero());
    }
}

fn check_finite<T: Real>(values: &[T], group: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteParam(group))
    }
}

/// Runs the full schedule. Deterministic given the seed: all randomness
/// flows from one generator and parallel reductions use fixed order.
pub fn train<T: Real>(dataset: &Dataset<T>, config: &TrainConfig) -> Result<TrainResult<T>> {
    if config.total_iters > 0 {
        config.validate()?;
    }
    let (train_ids, val_ids) = dataset.validation_split(config.val_every);
    if train_ids.is_empty() {
        return Err(Error::BadConfig(
            "validation split leaves no training frames".into(),
        ));
    }
    let extent = to_f64(dataset.canonical.bounding_radius());
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut model = initialize_model(&dataset.canonical, config.init_count, &mut rng);
    let mut opt = OptimizerState::<T>::new(model.len());
    let mut accum = DensifyAccum::new(model.len());
    let mut metrics = Vec::with_capacity(config.total_iters);
    let mut final_psnr = None;
    let mut buf = GroupBuffers::<T>::new();

    for iter in 1..=config.total_iters {
        let frame = &dataset.frames[train_ids[rng.random_range(0..train_ids.len())]];
        let background = Vector3::new(
            cast::<T>(rng.random_range(0.0..1.0)),
            cast::<T>(rng.random_range(0.0..1.0)),
            cast::<T>(rng.random_range(0.0..1.0)),
        );

        let posed = model.pose_all(&frame.mesh, &frame.field)?;
        let render = crate::rasterizer::render(&posed, &frame.camera, background);
        let photo = photometric_loss(
            &render,
            &frame.image,
            frame.mask.as_deref(),
            background,
            config.lambda_l,
            config.use_ssim,
        )?;
        let screen =
            crate::rasterizer::render_backward(&posed, &frame.camera, background, &photo.grad_image)?;
        let mut grads = backward_from_screen(&model, &frame.mesh, &frame.field, &screen)?;

        // Scaling regularizer on the canonical activated scales.
        let scales: Vec<Vector3<T>> =
            model.gaussians.iter().map(|g| g.activated_scale()).collect();
        let (loss_scaling, reg) = scaling_regularizer(&scales, config.t_s, config.t_r);
        let lambda_s = cast::<T>(config.lambda_s);
        for i in 0..model.len() {
            grads.log_scale[i] += reg[i].component_mul(&scales[i]) * lambda_s;
        }

        accum.observe(&grads, frame.camera.width, frame.camera.height);

        let n = model.len();
        // Embedding deltas.
        buf.fill(n, 3);
        for i in 0..n {
            let d = model.deltas[i];
            buf.params[i * 3] = d.du;
            buf.params[i * 3 + 1] = d.dv;
            buf.params[i * 3 + 2] = d.dd;
            for c in 0..3 {
                buf.grads[i * 3 + c] = grads.embedding[i][c];
            }
        }
        let lr_embed = cast::<T>(config.embedding_lr(iter, extent));
        opt.embedding.step(&mut buf.params, &buf.grads, lr_embed);
        check_finite(&buf.params, "embedding")?;
        for i in 0..n {
            model.deltas[i] = BaryDelta {
                du: buf.params[i * 3],
                dv: buf.params[i * 3 + 1],
                dd: buf.params[i * 3 + 2],
            };
        }

        // Canonical rotations, renormalized after the step.
        buf.fill(n, 4);
        for i in 0..n {
            let q = model.gaussians[i].rotation.into_inner();
            buf.params[i * 4] = q.w;
            buf.params[i * 4 + 1] = q.i;
            buf.params[i * 4 + 2] = q.j;
            buf.params[i * 4 + 3] = q.k;
            for c in 0..4 {
                buf.grads[i * 4 + c] = grads.rotation[i][c];
            }
        }
        opt.rotation
            .step(&mut buf.params, &buf.grads, cast(config.lr_rotation));
        check_finite(&buf.params, "rotation")?;
        for i in 0..n {
            model.gaussians[i].rotation = UnitQuaternion::from_quaternion(Quaternion::new(
                buf.params[i * 4],
                buf.params[i * 4 + 1],
                buf.params[i * 4 + 2],
                buf.params[i * 4 + 3],
            ));
        }

        // Log-scales.
        buf.fill(n, 3);
        for i in 0..n {
            for c in 0..3 {
                buf.params[i * 3 + c] = model.gaussians[i].log_scale[c];
                buf.grads[i * 3 + c] = grads.log_scale[i][c];
            }
        }
        opt.scale
            .step(&mut buf.params, &buf.grads, cast(config.lr_scale));
        check_finite(&buf.params, "scale")?;
        for i in 0..n {
            for c in 0..3 {
                model.gaussians[i].log_scale[c] = buf.params[i * 3 + c];
            }
        }

        // Opacity logits.
        buf.fill(n, 1);
        for i in 0..n {
            buf.params[i] = model.gaussians[i].opacity;
            buf.grads[i] = grads.opacity[i];
        }
        opt.opacity
            .step(&mut buf.params, &buf.grads, cast(config.lr_opacity));
        check_finite(&buf.params, "opacity")?;
        for i in 0..n {
            model.gaussians[i].opacity = buf.params[i];
        }

        // Colors, kept inside [0, 1].
        buf.fill(n, 3);
        for i in 0..n {
            for c in 0..3 {
                buf.params[i * 3 + c] = model.gaussians[i].color[c];
                buf.grads[i * 3 + c] = grads.color[i][c];
            }
        }
        opt.color
            .step(&mut buf.params, &buf.grads, cast(config.lr_color));
        check_finite(&buf.params, "color")?;
        for i in 0..n {
            for c in 0..3 {
                model.gaussians[i].color[c] = buf.params[i * 3 + c].clamp(T::zero(), T::one());
            }
        }

        // Densify / prune, opacity reset, walking.
        let on_interval = iter % config.densify_interval == 0;
        if iter >= config.densify_start && iter <= config.densify_stop && on_interval {
            densify_and_prune(
                &mut model,
                &mut opt,
                &accum,
                &dataset.canonical,
                config,
                extent,
                &mut rng,
            )?;
            accum.reset(model.len());
        }
        if iter % config.opacity_reset_interval == 0 && iter <= config.densify_stop {
            for g in &mut model.gaussians {
                g.opacity = cast(OPACITY_RESET_LOGIT);
            }
            opt.opacity.zero_all();
        }
        match config.walk_mode {
            WalkMode::Interval => {
                if iter >= config.densify_start && on_interval {
                    apply_walking(&mut model, &dataset.canonical, &mut opt);
                }
            }
            WalkMode::PerStep => {
                apply_walking(&mut model, &dataset.canonical, &mut opt);
            }
            WalkMode::Clipped => {}
        }

        if !model.consistent() || !opt.lockstep(model.len()) {
            return Err(Error::BadConfig(
                "internal error: model/optimizer cardinality out of lockstep".into(),
            ));
        }

        let psnr_val = if iter % config.val_interval == 0 || iter == config.total_iters {
            let p = validate_psnr(&model, dataset, &val_ids)?;
            final_psnr = Some(p);
            Some(p)
        } else {
            None
        };
        metrics.push(MetricsRow {
            iter,
            loss_l1: photo.l1,
            loss_ssim: photo.ssim,
            loss_scaling,
            n_gaussians: model.len(),
            psnr_val,
        });
    }

    Ok(TrainResult {
        model,
        metrics,
        final_psnr,
    })
}
