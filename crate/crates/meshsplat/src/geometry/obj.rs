//! Minimal OBJ reader/writer for `v`/`f` records, triangles only.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Real};

use super::TriangleMesh;

pub fn load_obj<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|_| Error::MissingFile(path.display().to_string()))?;
    parse_obj(BufReader::new(file), &path.display().to_string())
}

pub fn parse_obj<T: Real>(reader: impl BufRead, label: &str) -> Result<TriangleMesh<T>> {
    let mut vertices: Vec<Point3<T>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens.next().ok_or_else(|| Error::Parse {
                        path: label.to_string(),
                        line: lineno,
                        msg: "vertex needs 3 coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| Error::Parse {
                        path: label.to_string(),
                        line: lineno,
                        msg: format!("bad coordinate '{tok}'"),
                    })?;
                }
                vertices.push(Point3::new(cast(coords[0]), cast(coords[1]), cast(coords[2])));
            }
            "f" => {
                let idx: Vec<usize> = tokens
                    .map(|tok| parse_face_index(tok, vertices.len(), label, lineno))
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::Parse {
                        path: label.to_string(),
                        line: lineno,
                        msg: format!("face with {} vertices, only triangles supported", idx.len()),
                    });
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            // Normals, texcoords, groups, materials are ignored.
            _ => {}
        }
    }
    TriangleMesh::build(vertices, faces)
}

fn parse_face_index(tok: &str, nv: usize, label: &str, lineno: usize) -> Result<usize> {
    let first = tok.split('/').next().unwrap_or(tok);
    let i: i64 = first.parse().map_err(|_| Error::Parse {
        path: label.to_string(),
        line: lineno,
        msg: format!("bad face index '{tok}'"),
    })?;
    if i < 1 || i as usize > nv {
        return Err(Error::Parse {
            path: label.to_string(),
            line: lineno,
            msg: format!("face index {i} out of range (1..={nv})"),
        });
    }
    Ok(i as usize - 1)
}

/// Writes `v`/`f` records. Floats use shortest round-trip formatting so a
/// write/read cycle reproduces coordinates exactly.
pub fn write_obj<T: Real>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in mesh.vertices() {
        writeln!(out, "v {} {} {}", to_f64(p.x), to_f64(p.y), to_f64(p.z))?;
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}
