//! PLY pointcloud I/O, binary little-endian and ASCII.
//!
//! Positions and normals are written as doubles; instance and semantic labels
//! travel as the custom `uint` properties `instance_id` / `semantic_id`. The
//! reader also accepts `float` coordinates and the common integer widths.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Copy, PartialEq)]
pub enum PlyFormat {
    BinaryLittleEndian,
    Ascii,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum ScalarType {
    F32,
    F64,
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            "uchar" | "uint8" => ScalarType::U8,
            "char" | "int8" => ScalarType::I8,
            "ushort" | "uint16" => ScalarType::U16,
            "short" | "int16" => ScalarType::I16,
            "uint" | "uint32" => ScalarType::U32,
            "int" | "int32" => ScalarType::I32,
            other => return Err(Error::Data(format!("unsupported ply type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::U8 | ScalarType::I8 => 1,
            ScalarType::U16 | ScalarType::I16 => 2,
            ScalarType::F32 | ScalarType::U32 | ScalarType::I32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::F32 => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U16 => u16::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ScalarType::I16 => i16::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes.try_into().unwrap()) as f64,
        }
    }
}

pub fn write_ply(pc: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    pc.validate()?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);

    let fmt_line = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    write!(w, "ply\nformat {fmt_line} 1.0\nelement vertex {}\n", pc.len())?;
    write!(w, "property double x\nproperty double y\nproperty double z\n")?;
    if pc.normals.is_some() {
        write!(w, "property double nx\nproperty double ny\nproperty double nz\n")?;
    }
    if pc.instance_ids.is_some() {
        write!(w, "property uint instance_id\n")?;
    }
    if pc.semantic_ids.is_some() {
        write!(w, "property uint semantic_id\n")?;
    }
    write!(w, "end_header\n")?;

    for i in 0..pc.len() {
        let p = pc.points[i];
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in [p.x, p.y, p.z] {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(ns) = &pc.normals {
                    let n = ns[i].as_vec();
                    for v in [n.x, n.y, n.z] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                if let Some(ids) = &pc.instance_ids {
                    w.write_all(&ids[i].to_le_bytes())?;
                }
                if let Some(ids) = &pc.semantic_ids {
                    w.write_all(&ids[i].to_le_bytes())?;
                }
            }
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", p.x, p.y, p.z)?;
                if let Some(ns) = &pc.normals {
                    let n = ns[i].as_vec();
                    write!(w, " {} {} {}", n.x, n.y, n.z)?;
                }
                if let Some(ids) = &pc.instance_ids {
                    write!(w, " {}", ids[i])?;
                }
                if let Some(ids) = &pc.semantic_ids {
                    write!(w, " {}", ids[i])?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Binary PLY with per-point RGB plus the usual coordinate and label
/// properties.
pub fn write_ply_colored(pc: &PointCloud, colors: &[[u8; 3]], path: &Path) -> Result<()> {
    pc.validate()?;
    if colors.len() != pc.len() {
        return Err(Error::invalid_argument("one color per point required"));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        pc.len()
    )?;
    write!(w, "property double x\nproperty double y\nproperty double z\n")?;
    write!(w, "property uchar red\nproperty uchar green\nproperty uchar blue\n")?;
    if pc.instance_ids.is_some() {
        write!(w, "property uint instance_id\n")?;
    }
    if pc.semantic_ids.is_some() {
        write!(w, "property uint semantic_id\n")?;
    }
    write!(w, "end_header\n")?;
    for i in 0..pc.len() {
        let p = pc.points[i];
        for v in [p.x, p.y, p.z] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&colors[i])?;
        if let Some(ids) = &pc.instance_ids {
            w.write_all(&ids[i].to_le_bytes())?;
        }
        if let Some(ids) = &pc.semantic_ids {
            w.write_all(&ids[i].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Property {
    name: String,
    ty: ScalarType,
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Data("missing ply magic".into()));
    }
    let mut format = None;
    let mut count = 0usize;
    let mut props: Vec<Property> = Vec::new();
    let mut in_vertex = false;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Data("unexpected end of ply header".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["comment", ..] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "ascii" => PlyFormat::Ascii,
                    other => return Err(Error::Data(format!("unsupported ply format {other}"))),
                });
            }
            ["element", "vertex", n] => {
                count = n
                    .parse()
                    .map_err(|_| Error::Data("bad vertex count".into()))?;
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                props.push(Property { name: (*name).into(), ty: ScalarType::parse(ty)? });
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(Error::Data(format!("bad ply header line: {}", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| Error::Data("ply header missing format".into()))?;

    let find = |n: &str| props.iter().position(|p| p.name == n);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Data("ply vertex element lacks x/y/z".into())),
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let inst_idx = find("instance_id");
    let sem_idx = find("semantic_id");

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    match format {
        PlyFormat::BinaryLittleEndian => {
            let row_size: usize = props.iter().map(|p| p.ty.size()).sum();
            let mut buf = vec![0u8; row_size];
            for _ in 0..count {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Data("ply payload truncated".into()))?;
                let mut row = Vec::with_capacity(props.len());
                let mut off = 0;
                for p in &props {
                    row.push(p.ty.read_f64(&buf[off..off + p.ty.size()]));
                    off += p.ty.size();
                }
                rows.push(row);
            }
        }
        PlyFormat::Ascii => {
            for _ in 0..count {
                line.clear();
                if r.read_line(&mut line)? == 0 {
                    return Err(Error::Data("ply payload truncated".into()));
                }
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::Data("bad ply value".into())))
                    .collect::<Result<_>>()?;
                if row.len() != props.len() {
                    return Err(Error::Data("ply row width mismatch".into()));
                }
                rows.push(row);
            }
        }
    }

    let mut pc = PointCloud {
        points: Vec::with_capacity(count),
        normals: normal_idx.map(|_| Vec::with_capacity(count)),
        instance_ids: inst_idx.map(|_| Vec::with_capacity(count)),
        semantic_ids: sem_idx.map(|_| Vec::with_capacity(count)),
    };
    for row in rows {
        pc.points.push(Vec3::new(row[ix], row[iy], row[iz]));
        if let (Some((a, b, c)), Some(ns)) = (normal_idx, &mut pc.normals) {
            let v = Vec3::new(row[a], row[b], row[c]);
            ns.push(
                v.normalized()
                    .map_err(|_| Error::Data("degenerate normal in ply".into()))?,
            );
        }
        if let (Some(i), Some(ids)) = (inst_idx, &mut pc.instance_ids) {
            ids.push(row[i] as u32);
        }
        if let (Some(i), Some(ids)) = (sem_idx, &mut pc.semantic_ids) {
            ids.push(row[i] as u32);
        }
    }
    Ok(pc)
}
