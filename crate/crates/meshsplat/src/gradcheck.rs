//! Finite-difference verification of the full differentiable chain, from
//! pixels through posing and embedding evaluation to every parameter group.
//! Drives both the `gradcheck` CLI subcommand and the acceptance suite.

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::deformation::{build_field, DeformationField};
use crate::embedding::{BaryDelta, Embedding};
use crate::gaussians::quat::wxyz;
use crate::gaussians::{Camera, Gaussian};
use crate::geometry::{primitives, TriangleMesh};
use crate::model::{render_backward_model, SurfaceModel};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
/// Coordinates where both sides are below this are counted as matching
/// zeros rather than divided.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GroupStats {
    pub name: &'static str,
    pub checked: usize,
    pub failed: usize,
    pub max_rel_err: f64,
    pub nan_found: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupStats>,
    pub scenes: usize,
}

impl GradCheckReport {
    pub fn total_checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }

    pub fn total_failed(&self) -> usize {
        self.groups.iter().map(|g| g.failed).sum()
    }

    pub fn any_nan(&self) -> bool {
        self.groups.iter().any(|g| g.nan_found)
    }

    /// Pass rule: no NaNs anywhere and at least 99% of coordinates within
    /// the relative tolerance.
    pub fn passed(&self) -> bool {
        let checked = self.total_checked();
        checked > 0 && !self.any_nan() && self.total_failed() * 100 <= checked
    }

    pub fn table(&self) -> String {
        let mut s = String::from("group      checked  failed  max_rel_err\n");
        for g in &self.groups {
            s.push_str(&format!(
                "{:<10} {:>7} {:>7}  {:.3e}{}\n",
                g.name,
                g.checked,
                g.failed,
                g.max_rel_err,
                if g.nan_found { "  NAN" } else { "" }
            ));
        }
        s
    }
}

struct Scene {
    posed: TriangleMesh<f64>,
    field: DeformationField<f64>,
    camera: Camera<f64>,
    background: Vector3<f64>,
    grad_image: Vec<Vector3<f64>>,
    model: SurfaceModel<f64>,
}

/// A deformed icosphere observed by an orbiting camera, with random
/// interior embeddings kept clear of triangle edges so the finite
/// differences stay inside one chart.
fn random_scene(seed: u64, n_gaussians: usize, resolution: usize) -> Scene {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let cano = primitives::icosphere::<f64>(1);
    let bend = rng.random_range(0.2..0.5);
    let twist = rng.random_range(0.3..0.7);
    let posed = cano
        .with_vertices(
            cano.vertices()
                .iter()
                .map(|p| {
                    let theta = twist * p.z;
                    let (s, c) = (theta.sin(), theta.cos());
                    Point3::new(
                        (1.0 + bend * 0.2) * (p.x * c - p.y * s),
                        p.y.mul_add(c, p.x * s) * (1.0 - bend * 0.15),
                        p.z + bend * 0.1 * p.x,
                    )
                })
                .collect(),
        )
        .expect("deformed icosphere stays valid");
    let field = build_field(&cano, &posed, 0, None).unwrap();

    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let elevation = rng.random_range(-0.5..0.5f64);
    let eye = Point3::new(
        3.2 * azimuth.cos() * elevation.cos(),
        3.2 * azimuth.sin() * elevation.cos(),
        3.2 * elevation.sin(),
    );
    let f = resolution as f64 * 0.9;
    let camera = Camera::look_at(
        eye,
        Point3::origin(),
        Vector3::z(),
        f,
        f,
        resolution,
        resolution,
        0.05,
        100.0,
    )
    .unwrap();

    let mut embeddings = Vec::with_capacity(n_gaussians);
    let mut gaussians = Vec::with_capacity(n_gaussians);
    for _ in 0..n_gaussians {
        let k = rng.random_range(0..cano.num_faces());
        let u = rng.random_range(0.15..0.45);
        let v = rng.random_range(0.15..0.45);
        let d = rng.random_range(-0.05..0.05);
        embeddings.push(Embedding::new(k, u, v, d));
        let s = rng.random_range(-2.8..-1.6f64);
        gaussians.push(Gaussian {
            rotation: UnitQuaternion::from_quaternion(Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )),
            log_scale: Vector3::new(
                s + rng.random_range(-0.3..0.3),
                s + rng.random_range(-0.3..0.3),
                s + rng.random_range(-0.3..0.3),
            ),
            opacity: rng.random_range(-2.0..0.5),
            color: Vector3::new(
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
            ),
        });
    }
    let deltas = vec![BaryDelta::zero(); n_gaussians];
    let grad_image = (0..resolution * resolution)
        .map(|_| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    Scene {
        posed,
        field,
        camera,
        background: Vector3::new(
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ),
        grad_image,
        model: SurfaceModel {
            embeddings,
            deltas,
            gaussians,
        },
    }
}

fn scene_loss(scene: &Scene, model: &SurfaceModel<f64>) -> f64 {
    let out = crate::model::render_model(
        model,
        &scene.posed,
        &scene.field,
        &scene.camera,
        scene.background,
    )
    .unwrap();
    out.image
        .iter()
        .zip(&scene.grad_image)
        .map(|(p, g)| p.dot(g))
        .sum()
}

/// Runs the finite-difference check over `n_scenes` random scenes.
pub fn run_gradcheck(
    seed: u64,
    n_scenes: usize,
    n_gaussians: usize,
    resolution: usize,
) -> GradCheckReport {
    let names = ["u", "v", "d", "rotation", "log_scale", "opacity", "color"];
    let mut groups: Vec<GroupStats> = names
        .iter()
        .map(|name| GroupStats {
            name,
            checked: 0,
            failed: 0,
            max_rel_err: 0.0,
            nan_found: false,
        })
        .collect();

    for scene_idx in 0..n_scenes {
        let scene = random_scene(seed.wrapping_add(scene_idx as u64 * 7919), n_gaussians, resolution);
        let analytic = render_backward_model(
            &scene.model,
            &scene.posed,
            &scene.field,
            &scene.camera,
            scene.background,
            &scene.grad_image,
        )
        .unwrap();

        let record = |g: &mut GroupStats, ana: f64, fd: f64| {
            if !ana.is_finite() || !fd.is_finite() {
                g.nan_found = true;
                return;
            }
            let denom = ana.abs().max(fd.abs());
            if denom < GRAD_FLOOR {
                return;
            }
            g.checked += 1;
            let rel = (ana - fd).abs() / denom;
            g.max_rel_err = g.max_rel_err.max(rel);
            if rel > REL_TOL {
                g.failed += 1;
            }
        };

        let h = FD_STEP;
        for i in 0..scene.model.len() {
            // Embedding coordinates.
            for (slot, grp) in [(0usize, 0usize), (1, 1), (2, 2)] {
                let mut plus = scene.model.clone();
                let mut minus = scene.model.clone();
                match slot {
                    0 => {
                        plus.embeddings[i].u += h;
                        minus.embeddings[i].u -= h;
                    }
                    1 => {
                        plus.embeddings[i].v += h;
                        minus.embeddings[i].v -= h;
                    }
                    _ => {
                        plus.embeddings[i].d += h;
                        minus.embeddings[i].d -= h;
                    }
                }
                let fd = (scene_loss(&scene, &plus) - scene_loss(&scene, &minus)) / (2.0 * h);
                record(&mut groups[grp], analytic.embedding[i][slot], fd);
            }
            // Canonical rotation in the tangent space.
            let q0 = wxyz(&scene.model.gaussians[i].rotation.into_inner());
            for c in 0..4 {
                let mut dir = Vector4::zeros();
                dir[c] = 1.0;
                let dir = dir - q0 * q0.dot(&dir);
                if dir.norm() < 1e-9 {
                    continue;
                }
                let dir = dir.normalize();
                let apply = |sign: f64| {
                    let mut m = scene.model.clone();
                    let v = q0 + dir * (sign * h);
                    m.gaussians[i].rotation = UnitQuaternion::from_quaternion(Quaternion::new(
                        v.x, v.y, v.z, v.w,
                    ));
                    m
                };
                let fd =
                    (scene_loss(&scene, &apply(1.0)) - scene_loss(&scene, &apply(-1.0))) / (2.0 * h);
                record(&mut groups[3], analytic.rotation[i].dot(&dir), fd);
            }
            // Log-scale, opacity, color.
            for c in 0..3 {
                let mut plus = scene.model.clone();
                plus.gaussians[i].log_scale[c] += h;
                let mut minus = scene.model.clone();
                minus.gaussians[i].log_scale[c] -= h;
                let fd = (scene_loss(&scene, &plus) - scene_loss(&scene, &minus)) / (2.0 * h);
                record(&mut groups[4], analytic.log_scale[i][c], fd);
            }
            {
                let mut plus = scene.model.clone();
                plus.gaussians[i].opacity += h;
                let mut minus = scene.model.clone();
                minus.gaussians[i].opacity -= h;
                let fd = (scene_loss(&scene, &plus) - scene_loss(&scene, &minus)) / (2.0 * h);
                record(&mut groups[5], analytic.opacity[i], fd);
            }
            for c in 0..3 {
                let mut plus = scene.model.clone();
                plus.gaussians[i].color[c] += h;
                let mut minus = scene.model.clone();
                minus.gaussians[i].color[c] -= h;
                let fd = (scene_loss(&scene, &plus) - scene_loss(&scene, &minus)) / (2.0 * h);
                record(&mut groups[6], analytic.color[i][c], fd);
            }
        }
    }

    GradCheckReport {
        groups,
        scenes: n_scenes,
    }
}
