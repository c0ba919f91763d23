//! Mesh export/import (OBJ, binary PLY) and raw field-grid export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

use super::TriangleMesh;

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let r = BufReader::new(File::open(path)?);
    let mut mesh = TriangleMesh::default();
    for line in r.lines() {
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["v", x, y, z] => {
                let parse = |s: &str| -> Result<f64> {
                    s.parse().map_err(|_| Error::Data(format!("bad obj coordinate {s}")))
                };
                mesh.vertices.push(Vec3::new(parse(x)?, parse(y)?, parse(z)?));
            }
            ["f", a, b, c] => {
                let parse = |s: &str| -> Result<u32> {
                    let first = s.split('/').next().unwrap_or(s);
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::Data(format!("bad obj face index {s}")))?;
                    if i < 1 {
                        return Err(Error::Data("obj face indices must be positive".into()));
                    }
                    Ok((i - 1) as u32)
                };
                mesh.triangles.push([parse(a)?, parse(b)?, parse(c)?]);
            }
            _ => {}
        }
    }
    for t in &mesh.triangles {
        if t.iter().any(|&i| i as usize >= mesh.vertices.len()) {
            return Err(Error::Data("obj face index out of range".into()));
        }
    }
    Ok(mesh)
}

pub fn write_mesh_ply(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_mesh_ply(path: &Path) -> Result<TriangleMesh> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Data("missing ply magic".into()));
    }
    let mut n_vertex = 0usize;
    let mut n_face = 0usize;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Data("unexpected end of ply header".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => {
                return Err(Error::Data(format!("unsupported mesh ply format {other}")))
            }
            ["element", "vertex", n] => {
                n_vertex = n.parse().map_err(|_| Error::Data("bad vertex count".into()))?;
            }
            ["element", "face", n] => {
                n_face = n.parse().map_err(|_| Error::Data("bad face count".into()))?;
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::default();
    let mut buf = [0u8; 24];
    for _ in 0..n_vertex {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Data("ply vertex payload truncated".into()))?;
        mesh.vertices.push(Vec3::new(
            f64::from_le_bytes(buf[0..8].try_into().unwrap()),
            f64::from_le_bytes(buf[8..16].try_into().unwrap()),
            f64::from_le_bytes(buf[16..24].try_into().unwrap()),
        ));
    }
    for _ in 0..n_face {
        let mut n = [0u8; 1];
        r.read_exact(&mut n)
            .map_err(|_| Error::Data("ply face payload truncated".into()))?;
        if n[0] != 3 {
            return Err(Error::Data("only triangle faces are supported".into()));
        }
        let mut idx = [0u8; 12];
        r.read_exact(&mut idx)
            .map_err(|_| Error::Data("ply face payload truncated".into()))?;
        mesh.triangles.push([
            u32::from_le_bytes(idx[0..4].try_into().unwrap()),
            u32::from_le_bytes(idx[4..8].try_into().unwrap()),
            u32::from_le_bytes(idx[8..12].try_into().unwrap()),
        ]);
    }
    Ok(mesh)
}

/// JSON sidecar describing a raw field-grid dump.
#[derive(Debug, Serialize, Deserialize)]
pub struct GridSidecar {
    pub version: u32,
    pub dims: [usize; 3],
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    /// Memory order of the raw values; x varies fastest.
    pub order: String,
    pub dtype: String,
}

/// Sample `field` on a regular lattice over `bounds` and write the values as
/// raw little-endian f64 (x fastest) next to a JSON sidecar at
/// `<path>.json`.
pub fn write_field_grid<F>(field: F, bounds: Aabb, dims: [usize; 3], path: &Path) -> Result<()>
where
    F: Fn(Vec3) -> f64,
{
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::invalid_argument("grid dims must be >= 2"));
    }
    let ext = bounds.extent();
    let mut w = BufWriter::new(File::create(path)?);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = Vec3::new(
                    bounds.min.x + ext.x * i as f64 / (dims[0] - 1) as f64,
                    bounds.min.y + ext.y * j as f64 / (dims[1] - 1) as f64,
                    bounds.min.z + ext.z * k as f64 / (dims[2] - 1) as f64,
                );
                w.write_all(&field(p).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    let sidecar = GridSidecar {
        version: 1,
        dims,
        bounds_min: bounds.min.to_array(),
        bounds_max: bounds.max.to_array(),
        order: "x-fastest".into(),
        dtype: "f64".into(),
    };
    let json_path = path.with_extension(format!(
        "{}.json",
        path.extension().and_then(|e| e.to_str()).unwrap_or("raw")
    ));
    std::fs::write(json_path, serde_json::to_string_pretty(&sidecar).unwrap())?;
    Ok(())
}
