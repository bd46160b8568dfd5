//! Splat PLY reader/writer.
//!
//! Binary little-endian, float32 properties: x, y, z, opacity (logit),
//! scale_0..2 (log), rot_0..3 (quaternion wxyz), f_dc_0..2 (color encoded
//! as `(c - 0.5) / SH_C0`).

use std::io::{BufRead, Write};

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Real};

use super::Gaussian;

/// Zeroth spherical-harmonics basis constant used by the de-facto splat
/// color encoding.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3", "f_dc_0", "f_dc_1", "f_dc_2",
];

fn put_f32(out: &mut impl Write, v: f64) -> Result<()> {
    out.write_all(&(v as f32).to_le_bytes())?;
    Ok(())
}

fn next_line(input: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(Error::BadManifest("unexpected end of PLY header".into()));
    }
    Ok(line.trim().to_string())
}

pub fn write_splat_ply<T: Real>(
    out: &mut impl Write,
    gaussians: &[Gaussian<T>],
    positions: &[Point3<T>],
) -> Result<()> {
    assert_eq!(gaussians.len(), positions.len());
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    writeln!(out, "element vertex {}", gaussians.len())?;
    for name in PROPERTIES {
        writeln!(out, "property float {name}")?;
    }
    writeln!(out, "end_header")?;
    for (g, p) in gaussians.iter().zip(positions) {
        put_f32(out, to_f64(p.x))?;
        put_f32(out, to_f64(p.y))?;
        put_f32(out, to_f64(p.z))?;
        put_f32(out, to_f64(g.opacity))?;
        for c in 0..3 {
            put_f32(out, to_f64(g.log_scale[c]))?;
        }
        let q = g.rotation.into_inner();
        for v in [q.w, q.i, q.j, q.k] {
            put_f32(out, to_f64(v))?;
        }
        for c in 0..3 {
            put_f32(out, (to_f64(g.color[c]) - 0.5) / SH_C0)?;
        }
    }
    Ok(())
}

/// Reads a splat PLY written by [`write_splat_ply`] (or any binary
/// little-endian PLY carrying at least the same float properties).
pub fn read_splat_ply<T: Real>(
    input: &mut impl BufRead,
) -> Result<(Vec<Gaussian<T>>, Vec<Point3<T>>)> {
    if next_line(input)? != "ply" {
        return Err(Error::BadManifest("not a PLY file".into()));
    }
    if next_line(input)? != "format binary_little_endian 1.0" {
        return Err(Error::BadManifest(
            "only binary_little_endian 1.0 PLY supported".into(),
        ));
    }
    let mut count = 0usize;
    let mut names: Vec<String> = Vec::new();
    loop {
        let l = next_line(input)?;
        if l == "end_header" {
            break;
        }
        if let Some(rest) = l.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            let kind = it.next().unwrap_or("");
            if kind != "vertex" {
                return Err(Error::BadManifest(format!("unsupported element '{kind}'")));
            }
            count = it
                .next()
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| Error::BadManifest("bad element count".into()))?;
        } else if let Some(rest) = l.strip_prefix("property ") {
            let mut it = rest.split_whitespace();
            match it.next() {
                Some("float") => {}
                other => {
                    return Err(Error::BadManifest(format!(
                        "unsupported property type {other:?}"
                    )))
                }
            }
            names.push(
                it.next()
                    .ok_or_else(|| Error::BadManifest("property without name".into()))?
                    .to_string(),
            );
        } else if l.starts_with("comment") || l.is_empty() {
            // skip
        } else {
            return Err(Error::BadManifest(format!("unexpected header line '{l}'")));
        }
    }

    let index_of = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::BadManifest(format!("PLY missing property '{name}'")))
    };
    let slots: Vec<usize> = PROPERTIES
        .iter()
        .map(|n| index_of(n))
        .collect::<Result<_>>()?;

    let stride = names.len();
    let mut raw = vec![0u8; stride * 4];
    let mut gaussians = Vec::with_capacity(count);
    let mut positions = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut raw)?;
        let at = |slot: usize| -> f64 {
            let o = slots[slot] * 4;
            f32::from_le_bytes([raw[o], raw[o + 1], raw[o + 2], raw[o + 3]]) as f64
        };
        positions.push(Point3::new(
            cast::<T>(at(0)),
            cast::<T>(at(1)),
            cast::<T>(at(2)),
        ));
        let rotation = UnitQuaternion::from_quaternion(Quaternion::new(
            cast::<T>(at(7)),
            cast::<T>(at(8)),
            cast::<T>(at(9)),
            cast::<T>(at(10)),
        ));
        gaussians.push(Gaussian {
            rotation,
            log_scale: Vector3::new(cast(at(4)), cast(at(5)), cast(at(6))),
            opacity: cast(at(3)),
            color: Vector3::new(
                cast(at(11) * SH_C0 + 0.5),
                cast(at(12) * SH_C0 + 0.5),
                cast(at(13) * SH_C0 + 0.5),
            ),
        });
    }
    Ok((gaussians, positions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn ply_round_trip_within_f32() {
        let gaussians: Vec<Gaussian<f64>> = (0..5)
            .map(|i| {
                let t = i as f64 * 0.17 + 0.1;
                Gaussian {
                    rotation: UnitQuaternion::from_euler_angles(t, -t, 0.5 * t),
                    log_scale: Vector3::new(-2.0 + t, -1.5, -2.5 * t),
                    opacity: t - 0.5,
                    color: Vector3::new(0.1 + 0.1 * t, 0.8 - 0.1 * t, 0.5),
                }
            })
            .collect();
        let positions: Vec<Point3<f64>> = (0..5)
            .map(|i| Point3::new(i as f64, -0.25 * i as f64, 0.5))
            .collect();
        let mut buf = Vec::new();
        write_splat_ply(&mut buf, &gaussians, &positions).unwrap();
        let (g2, p2) = read_splat_ply::<f64>(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(g2.len(), 5);
        for i in 0..5 {
            assert!((p2[i] - positions[i]).norm() < 1e-6);
            assert!((g2[i].opacity - gaussians[i].opacity).abs() < 1e-6);
            assert!((g2[i].log_scale - gaussians[i].log_scale).norm() < 1e-6);
            assert!((g2[i].color - gaussians[i].color).norm() < 1e-6);
            let dq = (g2[i].rotation.into_inner() - gaussians[i].rotation.into_inner()).norm();
            assert!(dq < 1e-6, "quaternion deviation {dq}");
        }
        // Byte-stable: writing the parsed values back reproduces the file.
        let mut buf2 = Vec::new();
        write_splat_ply(&mut buf2, &g2, &p2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn empty_model_round_trips() {
        let mut buf = Vec::new();
        write_splat_ply::<f64>(&mut buf, &[], &[]).unwrap();
        let (g, p) = read_splat_ply::<f64>(&mut Cursor::new(&buf)).unwrap();
        assert!(g.is_empty() && p.is_empty());
    }
}
