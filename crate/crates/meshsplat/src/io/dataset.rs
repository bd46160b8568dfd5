//! Dataset manifest and frame loading.
//!
//! Manifest JSON: `{"canonical_mesh": path, "camera_model": "pinhole",
//! "frames": [{"image", "mesh", "camera", "mask"?}, ...]}`. Paths are
//! relative to the manifest's directory. Frame order in the manifest
//! defines frame order everywhere.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::deformation::{build_field, DeformationField};
use crate::error::{Error, Result};
use crate::gaussians::{Camera, CameraRecord};
use crate::geometry::{load_obj, TriangleMesh};
use crate::img::load_image;
use crate::scalar::Real;

pub const SEQUENCE_MANIFEST: &str = "sequence.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image: String,
    pub mesh: String,
    pub camera: CameraRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub canonical_mesh: String,
    pub camera_model: String,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone)]
pub struct DatasetFrame<T: Real> {
    pub id: usize,
    /// Linear RGB target pixels, row-major.
    pub image: Vec<Vector3<T>>,
    /// Optional coverage mask in [0, 1], one value per pixel.
    pub mask: Option<Vec<T>>,
    pub camera: Camera<T>,
    pub mesh: TriangleMesh<T>,
    pub field: DeformationField<T>,
}

#[derive(Debug, Clone)]
pub struct Dataset<T: Real> {
    pub canonical: TriangleMesh<T>,
    pub frames: Vec<DatasetFrame<T>>,
}

impl<T: Real> Dataset<T> {
    /// Held-out frame ids: every `val_every`-th frame (0, val_every, ...).
    pub fn validation_split(&self, val_every: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for i in 0..self.frames.len() {
            if val_every > 0 && i % val_every == 0 {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val)
    }
}

pub fn load_dataset<T: Real>(manifest_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|_| Error::MissingFile(manifest_path.display().to_string()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::BadManifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.frames.is_empty() {
        return Err(Error::BadManifest(format!(
            "{}: empty frames list",
            manifest_path.display()
        )));
    }
    if manifest.camera_model != "pinhole" {
        return Err(Error::BadManifest(format!(
            "unsupported camera_model '{}'",
            manifest.camera_model
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf { base.join(p) };

    let canonical: TriangleMesh<T> = load_obj(resolve(&manifest.canonical_mesh))?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut prev_field: Option<DeformationField<T>> = None;
    for (id, rec) in manifest.frames.iter().enumerate() {
        let camera: Camera<T> = rec.camera.to_camera()?;
        let img = load_image::<T>(resolve(&rec.image))?;
        if img.channels != 3 {
            return Err(Error::BadManifest(format!(
                "frame {id}: image must have 3 channels, got {}",
                img.channels
            )));
        }
        if img.width != camera.width || img.height != camera.height {
            return Err(Error::ShapeMismatch(format!(
                "frame {id}: image {}x{} vs camera {}x{}",
                img.width, img.height, camera.width, camera.height
            )));
        }
        let mask = match &rec.mask {
            None => None,
            Some(mpath) => {
                let m = load_image::<T>(resolve(mpath))?;
                if m.channels != 1 || m.width != img.width || m.height != img.height {
                    return Err(Error::ShapeMismatch(format!(
                        "frame {id}: mask shape {}x{}x{}",
                        m.width, m.height, m.channels
                    )));
                }
                Some(m.data)
            }
        };
        let mesh: TriangleMesh<T> = load_obj(resolve(&rec.mesh))?;
        if mesh.checksum() != canonical.checksum() || mesh.num_vertices() != canonical.num_vertices()
        {
            return Err(Error::TopologyMismatch(format!(
                "frame {id} ({})",
                rec.mesh
            )));
        }
        let field = build_field(&canonical, &mesh, id, prev_field.as_ref())?;
        prev_field = Some(field.clone());
        frames.push(DatasetFrame {
            id,
            image: img.rgb_pixels(),
            mask,
            camera,
            mesh,
            field,
        });
    }
    Ok(Dataset { canonical, frames })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceManifest {
    frames: Vec<String>,
}

/// Loads a posed-mesh sequence: a directory containing per-frame OBJ files
/// plus `sequence.json` listing the frame order.
pub fn load_mesh_sequence<T: Real>(
    dir: impl AsRef<Path>,
    canonical: &TriangleMesh<T>,
) -> Result<Vec<TriangleMesh<T>>> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(SEQUENCE_MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|_| Error::MissingFile(manifest_path.display().to_string()))?;
    let manifest: SequenceManifest = serde_json::from_str(&text)
        .map_err(|e| Error::BadManifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.frames.is_empty() {
        return Err(Error::BadManifest(format!(
            "{}: empty frames list",
            manifest_path.display()
        )));
    }
    manifest
        .frames
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mesh: TriangleMesh<T> = load_obj(dir.join(name))?;
            if mesh.checksum() != canonical.checksum()
                || mesh.num_vertices() != canonical.num_vertices()
            {
                return Err(Error::TopologyMismatch(format!("sequence frame {i} ({name})")));
            }
            Ok(mesh)
        })
        .collect()
}
