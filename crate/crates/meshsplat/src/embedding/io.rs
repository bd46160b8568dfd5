//! Embedding set serialization.
//!
//! Schema: `{"version": 1, "mesh_checksum": <u64>, "embeddings":
//! [{"k", "u", "v", "d"}, ...]}`. The checksum is FNV-1a 64 over the face
//! index buffer and guards against pairing embeddings with the wrong mesh.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::scalar::{cast, to_f64, Real};

use super::Embedding;

pub const EMBEDDING_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    k: usize,
    u: f64,
    v: f64,
    d: f64,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    version: u32,
    mesh_checksum: u64,
    embeddings: Vec<EmbeddingRecord>,
}

pub fn write_embeddings<T: Real>(
    out: &mut impl Write,
    embeddings: &[Embedding<T>],
    mesh_checksum: u64,
) -> Result<()> {
    let file = EmbeddingFile {
        version: EMBEDDING_SCHEMA_VERSION,
        mesh_checksum,
        embeddings: embeddings
            .iter()
            .map(|e| EmbeddingRecord {
                k: e.k,
                u: to_f64(e.u),
                v: to_f64(e.v),
                d: to_f64(e.d),
            })
            .collect(),
    };
    serde_json::to_writer(out, &file)?;
    Ok(())
}

pub fn save_embeddings<T: Real>(
    path: impl AsRef<Path>,
    embeddings: &[Embedding<T>],
    mesh_checksum: u64,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_embeddings(&mut out, embeddings, mesh_checksum)
}

/// Reads an embedding set, verifying the checksum against `mesh`.
pub fn read_embeddings<T: Real>(
    input: &mut impl Read,
    mesh: &TriangleMesh<T>,
) -> Result<Vec<Embedding<T>>> {
    let file: EmbeddingFile = serde_json::from_reader(input)?;
    if file.version != EMBEDDING_SCHEMA_VERSION {
        return Err(Error::BadManifest(format!(
            "unsupported embedding schema version {}",
            file.version
        )));
    }
    if file.mesh_checksum != mesh.checksum() {
        return Err(Error::ChecksumMismatch {
            expected: mesh.checksum(),
            got: file.mesh_checksum,
        });
    }
    file.embeddings
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.k >= mesh.num_faces() {
                return Err(Error::IndexOutOfRange(format!(
                    "embedding {i} references face {} of {}",
                    r.k,
                    mesh.num_faces()
                )));
            }
            Ok(Embedding::new(r.k, cast(r.u), cast(r.v), cast(r.d)))
        })
        .collect()
}

pub fn load_embeddings<T: Real>(
    path: impl AsRef<Path>,
    mesh: &TriangleMesh<T>,
) -> Result<Vec<Embedding<T>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|_| Error::MissingFile(path.display().to_string()))?;
    read_embeddings(&mut std::io::BufReader::new(file), mesh)
}
