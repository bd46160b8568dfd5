//! Model directory layout: `gaussians.ply` (splat PLY), `embeddings.json`
//! (embedding schema with mesh checksum), `canonical.obj` (copy of the
//! canonical mesh).

use std::path::Path;

use crate::embedding::{load_embeddings, save_embeddings, BaryDelta};
use crate::error::{Error, Result};
use crate::gaussians::{read_splat_ply, write_splat_ply};
use crate::geometry::{load_obj, write_obj, TriangleMesh};
use crate::model::SurfaceModel;
use crate::scalar::Real;

pub const PLY_FILE: &str = "gaussians.ply";
pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const CANONICAL_MESH_FILE: &str = "canonical.obj";

/// Writes the model next to a copy of its canonical mesh. PLY positions are
/// the canonical embedded positions (informational; embeddings are the
/// source of truth on import).
pub fn export_model<T: Real>(
    model: &SurfaceModel<T>,
    canonical: &TriangleMesh<T>,
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let positions = model
        .embeddings
        .iter()
        .map(|e| crate::embedding::embedded_position(canonical, e))
        .collect::<Result<Vec<_>>>()?;
    let mut ply = std::io::BufWriter::new(std::fs::File::create(out_dir.join(PLY_FILE))?);
    write_splat_ply(&mut ply, &model.gaussians, &positions)?;
    save_embeddings(
        out_dir.join(EMBEDDINGS_FILE),
        &model.embeddings,
        canonical.checksum(),
    )?;
    write_obj(canonical, out_dir.join(CANONICAL_MESH_FILE))?;
    Ok(())
}

/// Loads a model directory back. The embedding checksum is verified against
/// the stored canonical mesh.
pub fn import_model<T: Real>(dir: impl AsRef<Path>) -> Result<(SurfaceModel<T>, TriangleMesh<T>)> {
    let dir = dir.as_ref();
    let canonical: TriangleMesh<T> = load_obj(dir.join(CANONICAL_MESH_FILE))?;
    let embeddings = load_embeddings(dir.join(EMBEDDINGS_FILE), &canonical)?;
    let ply_path = dir.join(PLY_FILE);
    let file = std::fs::File::open(&ply_path)
        .map_err(|_| Error::MissingFile(ply_path.display().to_string()))?;
    let (gaussians, _positions) = read_splat_ply(&mut std::io::BufReader::new(file))?;
    if gaussians.len() != embeddings.len() {
        return Err(Error::BadManifest(format!(
            "model has {} gaussians but {} embeddings",
            gaussians.len(),
            embeddings.len()
        )));
    }
    let deltas = vec![BaryDelta::zero(); embeddings.len()];
    Ok((
        SurfaceModel {
            embeddings,
            deltas,
            gaussians,
        },
        canonical,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Embedding;
    use crate::gaussians::Gaussian;
    use crate::geometry::primitives::icosphere;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};

    #[test]
    fn export_import_round_trip() {
        let mesh = icosphere::<f64>(1);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(55);
        let n = 20;
        let model = SurfaceModel {
            embeddings: (0..n)
                .map(|_| {
                    Embedding::new(
                        rng.random_range(0..mesh.num_faces()),
                        rng.random_range(0.1..0.5),
                        rng.random_range(0.1..0.4),
                        rng.random_range(-0.1..0.1),
                    )
                })
                .collect(),
            deltas: vec![BaryDelta::zero(); n],
            gaussians: (0..n)
                .map(|_| Gaussian {
                    rotation: UnitQuaternion::from_euler_angles(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                    ),
                    log_scale: Vector3::new(
                        rng.random_range(-3.0..-1.0),
                        rng.random_range(-3.0..-1.0),
                        rng.random_range(-3.0..-1.0),
                    ),
                    opacity: rng.random_range(-3.0..3.0),
                    color: Vector3::new(
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                    ),
                })
                .collect(),
        };
        let dir = std::env::temp_dir().join("meshsplat_model_io_test");
        let _ = std::fs::remove_dir_all(&dir);
        export_model(&model, &mesh, &dir).unwrap();
        let (back, mesh2) = import_model::<f64>(&dir).unwrap();
        assert_eq!(mesh2.checksum(), mesh.checksum());
        assert_eq!(back.len(), n);
        for i in 0..n {
            assert_eq!(back.embeddings[i], model.embeddings[i], "embeddings are exact");
            let g0 = &model.gaussians[i];
            let g1 = &back.gaussians[i];
            assert!((g0.opacity - g1.opacity).abs() < 1e-6);
            assert!((g0.log_scale - g1.log_scale).norm() < 1e-6);
            assert!((g0.color - g1.color).norm() < 1e-6);
            assert!(
                (g0.rotation.into_inner() - g1.rotation.into_inner()).norm() < 1e-6
                    || (g0.rotation.into_inner() + g1.rotation.into_inner()).norm() < 1e-6
            );
        }

        // Empty model round-trips too.
        let empty = SurfaceModel::<f64>::default();
        let dir2 = std::env::temp_dir().join("meshsplat_model_io_empty");
        let _ = std::fs::remove_dir_all(&dir2);
        export_model(&empty, &mesh, &dir2).unwrap();
        let (back, _) = import_model::<f64>(&dir2).unwrap();
        assert!(back.is_empty());
    }
}
