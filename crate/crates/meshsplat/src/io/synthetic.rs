//! Self-consistent synthetic scenes: a procedural mesh, a ground-truth
//! Gaussian set embedded on it, a parametric deformation per frame, and an
//! orbiting camera. Ground-truth images come from this crate's own
//! brute-force reference renderer, so training against them tests
//! optimization rather than model mismatch.
//!
//! Stored images are unpremultiplied foreground colors with the coverage
//! alpha in the mask channel, so compositing `mask * image + (1-mask) * bg`
//! reproduces a render over `bg` exactly.

use std::path::Path;

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::deformation::build_field;
use crate::embedding::{BaryDelta, Embedding};
use crate::error::Result;
use crate::gaussians::{Camera, CameraRecord};
use crate::geometry::{primitives, write_obj, TriangleMesh};
use crate::img::{save_raw, write_png, Image};
use crate::io::dataset::{Dataset, DatasetFrame, FrameRecord, Manifest};
use crate::model::SurfaceModel;
use crate::rasterizer::render_reference;
use crate::scalar::{cast, logit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshKind {
    Icosphere,
    Plane,
    Cylinder,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub mesh: MeshKind,
    /// Subdivision level (icosphere) or grid resolution (plane/cylinder).
    pub detail: u32,
    pub n_gaussians: usize,
    pub n_frames: usize,
    pub n_cameras: usize,
    pub resolution: usize,
    /// Deformation strength; 0 keeps every posed mesh equal to canonical.
    pub deform_amplitude: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            mesh: MeshKind::Icosphere,
            detail: 2,
            n_gaussians: 500,
            n_frames: 25,
            n_cameras: 25,
            resolution: 128,
            deform_amplitude: 0.5,
        }
    }
}

pub struct SyntheticScene<T: Real> {
    pub dataset: Dataset<T>,
    pub ground_truth: SurfaceModel<T>,
}

fn base_mesh<T: Real>(spec: &SyntheticSpec) -> TriangleMesh<T> {
    match spec.mesh {
        MeshKind::Icosphere => primitives::icosphere(spec.detail),
        MeshKind::Plane => {
            let n = spec.detail.max(1) as usize;
            let m = primitives::plane_grid::<T>(n);
            let s = cast::<T>(2.0 / n as f64);
            let one = T::one();
            m.with_vertices(
                m.vertices()
                    .iter()
                    .map(|p| Point3::new(p.x * s - one, p.y * s - one, p.z))
                    .collect(),
            )
            .expect("scaled plane stays valid")
        }
        MeshKind::Cylinder => {
            let n = spec.detail.max(3) as usize;
            let m = primitives::cylinder::<T>(2 * n, n, 0.7, 2.0);
            m.with_vertices(
                m.vertices()
                    .iter()
                    .map(|p| Point3::new(p.x, p.y, p.z - T::one()))
                    .collect(),
            )
            .expect("shifted cylinder stays valid")
        }
    }
}

/// Smooth, topology-preserving per-frame warp: twist about z plus a radial
/// bulge, both phased over the sequence.
fn deform_vertex<T: Real>(p: &Point3<T>, phase: f64, amplitude: f64) -> Point3<T> {
    let x = to_f64(p.x);
    let y = to_f64(p.y);
    let z = to_f64(p.z);
    let twist = amplitude * 0.6 * (std::f64::consts::TAU * phase).sin() * z;
    let (s, c) = twist.sin_cos();
    let bulge = 1.0 + amplitude * 0.12 * (std::f64::consts::TAU * phase + 1.3 * z).sin();
    Point3::new(
        cast((x * c - y * s) * bulge),
        cast((x * s + y * c) * bulge),
        cast(z + amplitude * 0.08 * (std::f64::consts::TAU * phase).cos() * x),
    )
}

/// Ground-truth parameters are made exactly reproducible through the
/// float32 model files: values are rounded through the same encode/decode
/// chain the PLY reader applies, so a write/read cycle is the identity and
/// re-rendering from disk is bit-exact.
fn snap_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Color round-trips through the `(c - 0.5) / SH_C0` encoding.
fn snap_color(c: f64) -> f64 {
    snap_f32((c - 0.5) / crate::gaussians::SH_C0) * crate::gaussians::SH_C0 + 0.5
}

/// A unit quaternion whose components are f32-representable and stable
/// under the importer's renormalization.
fn stable_unit_quat(q: Quaternion<f64>) -> Quaternion<f64> {
    let snap = |q: Quaternion<f64>| {
        Quaternion::new(snap_f32(q.w), snap_f32(q.i), snap_f32(q.j), snap_f32(q.k))
    };
    let mut s = snap(q.normalize());
    for _ in 0..8 {
        let again = snap(s.normalize());
        if again == s {
            break;
        }
        s = again;
    }
    s
}

fn random_ground_truth<T: Real>(
    mesh: &TriangleMesh<T>,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> SurfaceModel<T> {
    let cumulative = mesh.cumulative_areas();
    let total = to_f64(*cumulative.last().unwrap());
    let mean_edge = to_f64(mesh.mean_edge_length());
    let mut embeddings = Vec::with_capacity(n);
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        let target = cast::<T>(rng.random_range(0.0..total));
        let k = cumulative.partition_point(|&a| a <= target).saturating_sub(1);
        let k = k.min(mesh.num_faces() - 1);
        let r1: f64 = rng.random_range(0.0..1.0);
        let r2: f64 = rng.random_range(0.0..1.0);
        let sq = r1.sqrt();
        let u = 1.0 - sq;
        let v = sq * (1.0 - r2);
        let d = rng.random_range(-0.3..0.3) * mean_edge;
        embeddings.push(Embedding::new(k, cast(u), cast(v), cast(d)));

        let s_base = mean_edge * rng.random_range(0.25..0.6);
        let stable = stable_unit_quat(Quaternion::new(
            rng.random_range(-1.0..1.0f64),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        // Same normalization the PLY importer applies.
        let rotation = UnitQuaternion::from_quaternion(Quaternion::new(
            cast::<T>(stable.w),
            cast(stable.i),
            cast(stable.j),
            cast(stable.k),
        ));
        let mut jittered = || (s_base * rng.random_range(0.8..1.25f64)).ln();
        let (sx, sy, sz) = (jittered(), jittered(), jittered());
        gaussians.push(crate::gaussians::Gaussian {
            rotation,
            log_scale: Vector3::new(
                cast(snap_f32(sx)),
                cast(snap_f32(sy)),
                cast(snap_f32(sz)),
            ),
            opacity: cast(snap_f32(logit(rng.random_range(0.5..0.95f64)))),
            color: Vector3::new(
                cast(snap_color(rng.random_range(0.05..0.95))),
                cast(snap_color(rng.random_range(0.05..0.95))),
                cast(snap_color(rng.random_range(0.05..0.95))),
            ),
        });
    }
    SurfaceModel {
        deltas: vec![BaryDelta::zero(); embeddings.len()],
        embeddings,
        gaussians,
    }
}

fn orbit_camera<T: Real>(i: usize, spec: &SyntheticSpec, extent: f64) -> Camera<T> {
    let cam_idx = i % spec.n_cameras.max(1);
    let az = std::f64::consts::TAU * cam_idx as f64 / spec.n_cameras.max(1) as f64;
    let el = 0.45 * (std::f64::consts::TAU * 3.0 * cam_idx as f64 / spec.n_cameras.max(1) as f64)
        .sin();
    let dist = 3.2 * extent.max(1e-6);
    let eye = Point3::new(
        cast(dist * az.cos() * el.cos()),
        cast(dist * az.sin() * el.cos()),
        cast(dist * el.sin()),
    );
    let f = cast::<T>(0.9 * spec.resolution as f64);
    Camera::look_at(
        eye,
        Point3::origin(),
        Vector3::z(),
        f,
        f,
        spec.resolution,
        spec.resolution,
        cast(0.05 * extent),
        cast(100.0 * extent),
    )
    .expect("orbit camera is valid")
}

/// One frame's ground-truth render: unpremultiplied colors plus alpha.
fn render_frame<T: Real>(
    scene_model: &SurfaceModel<T>,
    mesh: &TriangleMesh<T>,
    field: &crate::deformation::DeformationField<T>,
    camera: &Camera<T>,
) -> Result<(Vec<Vector3<T>>, Vec<T>)> {
    let posed = scene_model.pose_all(mesh, field)?;
    let out = render_reference(&posed, camera, Vector3::zeros());
    let eps = cast::<T>(1e-6);
    let mut colors = Vec::with_capacity(out.image.len());
    let mut alphas = Vec::with_capacity(out.image.len());
    for (rgb, t) in out.image.iter().zip(&out.transmittance) {
        let alpha = T::one() - *t;
        if alpha < eps {
            colors.push(Vector3::zeros());
            alphas.push(T::zero());
        } else {
            colors.push(rgb / alpha);
            alphas.push(alpha);
        }
    }
    Ok((colors, alphas))
}

/// Builds the scene in memory: canonical mesh, ground-truth model, posed
/// meshes, cameras, and reference-rendered targets.
pub fn build_synthetic<T: Real>(seed: u64, spec: &SyntheticSpec) -> Result<SyntheticScene<T>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let canonical = base_mesh::<T>(spec);
    let ground_truth = random_ground_truth(&canonical, spec.n_gaussians, &mut rng);
    let extent = to_f64(canonical.bounding_radius());

    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut prev = None;
    for i in 0..spec.n_frames {
        let phase = i as f64 / spec.n_frames.max(1) as f64;
        let posed = canonical
            .with_vertices(
                canonical
                    .vertices()
                    .iter()
                    .map(|p| deform_vertex(p, phase, spec.deform_amplitude))
                    .collect(),
            )
            .expect("synthetic deformation keeps the mesh valid");
        let field = build_field(&canonical, &posed, i, prev.as_ref())?;
        let camera = orbit_camera::<T>(i, spec, extent);
        let (image, mask) = render_frame(&ground_truth, &posed, &field, &camera)?;
        prev = Some(field.clone());
        frames.push(DatasetFrame {
            id: i,
            image,
            mask: Some(mask),
            camera,
            mesh: posed,
            field,
        });
    }
    Ok(SyntheticScene {
        dataset: Dataset { canonical, frames },
        ground_truth,
    })
}

/// Builds the scene and writes it to disk: manifest, canonical and per-frame
/// meshes, raw float images/masks (bit-exact targets), preview PNGs, and the
/// ground-truth model directory.
pub fn generate_synthetic<T: Real>(
    seed: u64,
    spec: &SyntheticSpec,
    out_dir: impl AsRef<Path>,
) -> Result<SyntheticScene<T>> {
    let out_dir = out_dir.as_ref();
    let scene = build_synthetic::<T>(seed, spec)?;
    std::fs::create_dir_all(out_dir.join("meshes"))?;
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;
    write_obj(&scene.dataset.canonical, out_dir.join("canonical.obj"))?;
    crate::io::export_model(
        &scene.ground_truth,
        &scene.dataset.canonical,
        out_dir.join("ground_truth_model"),
    )?;

    let mut records = Vec::with_capacity(scene.dataset.frames.len());
    for frame in &scene.dataset.frames {
        let mesh_name = format!("meshes/frame_{:04}.obj", frame.id);
        let image_name = format!("images/frame_{:04}.raw", frame.id);
        let png_name = format!("images/frame_{:04}.png", frame.id);
        let mask_name = format!("masks/frame_{:04}.raw", frame.id);
        write_obj(&frame.mesh, out_dir.join(&mesh_name))?;
        let (w, h) = (frame.camera.width, frame.camera.height);
        let img = Image::from_rgb(w, h, &frame.image);
        save_raw(&img, out_dir.join(&image_name))?;
        write_png(&img, out_dir.join(&png_name))?;
        let mask = Image {
            width: w,
            height: h,
            channels: 1,
            data: frame.mask.clone().unwrap(),
        };
        save_raw(&mask, out_dir.join(&mask_name))?;
        records.push(FrameRecord {
            image: image_name,
            mesh: mesh_name,
            camera: CameraRecord::from_camera(&frame.camera),
            mask: Some(mask_name),
        });
    }
    let manifest = Manifest {
        canonical_mesh: "canonical.obj".into(),
        camera_model: "pinhole".into(),
        frames: records,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(scene)
}
