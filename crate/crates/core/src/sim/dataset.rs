//! On-disk dataset format: a directory with `manifest.json` plus one binary
//! record per scene. All sections are little-endian and length-prefixed; the
//! reader validates the magic, version, and every length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::fields::{Primitive, PrimitiveKind, SceneGT};
use crate::geom::{Aabb, GraspPose, RotMat, UnitVec3, Vec3};

use super::{CameraPose, GraspLabel, LabeledScene, OccupancySample, SceneGenConfig};

const MAGIC: &[u8; 4] = b"ICGS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: SceneGenConfig,
    pub base_seed: u64,
    pub count: usize,
    pub files: Vec<String>,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(manifest_path(dir), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(manifest_path(dir))
        .map_err(|_| Error::Data(format!("missing manifest in {}", dir.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.w.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn vec3(&mut self, v: Vec3) -> Result<()> {
        self.f64(v.x)?;
        self.f64(v.y)?;
        self.f64(v.z)
    }
    fn rot(&mut self, r: &RotMat) -> Result<()> {
        for c in 0..3 {
            self.vec3(r.col(c))?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b).map_err(|_| Error::Data("record truncated".into()))?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b).map_err(|_| Error::Data("record truncated".into()))?;
        Ok(u32::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b).map_err(|_| Error::Data("record truncated".into()))?;
        Ok(f64::from_le_bytes(b))
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn rot(&mut self) -> Result<RotMat> {
        let c0 = self.vec3()?;
        let c1 = self.vec3()?;
        let c2 = self.vec3()?;
        RotMat::from_cols(c0, c1, c2).map_err(|_| Error::Data("invalid rotation in record".into()))
    }
}

fn kind_code(kind: PrimitiveKind) -> u8 {
    match kind {
        PrimitiveKind::Sphere => 0,
        PrimitiveKind::Box => 1,
        PrimitiveKind::Cylinder => 2,
    }
}

fn kind_from_code(code: u8) -> Result<PrimitiveKind> {
    Ok(match code {
        0 => PrimitiveKind::Sphere,
        1 => PrimitiveKind::Box,
        2 => PrimitiveKind::Cylinder,
        other => return Err(Error::Data(format!("unknown primitive kind {other}"))),
    })
}

pub fn write_record(path: &Path, scene: &LabeledScene) -> Result<()> {
    let mut w = Writer { w: BufWriter::new(File::create(path)?) };
    w.w.write_all(MAGIC)?;
    w.u32(VERSION)?;

    // Scene geometry.
    w.u32(scene.scene.primitives.len() as u32)?;
    for p in &scene.scene.primitives {
        w.u8(kind_code(p.kind))?;
        w.u32(p.class_id)?;
        w.rot(&p.pose.rotation)?;
        w.vec3(p.pose.translation)?;
        w.vec3(p.size)?;
    }
    w.vec3(scene.scene.workspace.min)?;
    w.vec3(scene.scene.workspace.max)?;
    w.f64(scene.scene.table_height)?;

    // Camera.
    w.vec3(scene.camera.position)?;
    w.vec3(scene.camera.look_at)?;
    let (fx, fy, cx, cy, iw, ih) = scene.camera.intrinsics;
    for v in [fx, fy, cx, cy] {
        w.f64(v)?;
    }
    w.u32(iw as u32)?;
    w.u32(ih as u32)?;

    // Cloud.
    let pc = &scene.cloud;
    w.u32(pc.len() as u32)?;
    for p in &pc.points {
        w.vec3(*p)?;
    }
    w.u8(u8::from(pc.normals.is_some()))?;
    if let Some(ns) = &pc.normals {
        for n in ns {
            w.vec3(n.as_vec())?;
        }
    }
    w.u8(u8::from(pc.instance_ids.is_some()))?;
    if let Some(ids) = &pc.instance_ids {
        for &i in ids {
            w.u32(i)?;
        }
    }
    w.u8(u8::from(pc.semantic_ids.is_some()))?;
    if let Some(ids) = &pc.semantic_ids {
        for &i in ids {
            w.u32(i)?;
        }
    }

    // Grasp labels.
    w.u32(scene.grasps.len() as u32)?;
    for g in &scene.grasps {
        w.vec3(g.contact)?;
        w.vec3(g.normal.as_vec())?;
        w.u8(g.success.len() as u8)?;
        for &s in &g.success {
            w.u8(s)?;
        }
        w.f64(g.width)?;
        w.u32(g.object_id)?;
    }

    // Occupancy samples.
    w.u32(scene.occupancy.len() as u32)?;
    w.u8(scene.scene.primitives.len() as u8)?;
    for s in &scene.occupancy {
        w.vec3(s.position)?;
        for &b in &s.inside {
            w.u8(b)?;
        }
    }
    w.f64(scene.near_frac)?;
    w.w.flush()?;
    Ok(())
}

pub fn read_record(path: &Path) -> Result<LabeledScene> {
    let mut r = Reader { r: BufReader::new(File::open(path)?) };
    let mut magic = [0u8; 4];
    r.r.read_exact(&mut magic).map_err(|_| Error::Data("record truncated".into()))?;
    if &magic != MAGIC {
        return Err(Error::Data("bad record magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported record version {version}")));
    }

    let n_prims = r.u32()? as usize;
    if n_prims > 64 {
        return Err(Error::Data("implausible primitive count".into()));
    }
    let mut primitives = Vec::with_capacity(n_prims);
    for _ in 0..n_prims {
        let kind = kind_from_code(r.u8()?)?;
        let class_id = r.u32()?;
        let rotation = r.rot()?;
        let translation = r.vec3()?;
        let size = r.vec3()?;
        primitives.push(Primitive { kind, pose: GraspPose::new(rotation, translation), size, class_id });
    }
    let ws_min = r.vec3()?;
    let ws_max = r.vec3()?;
    let table_height = r.f64()?;
    let scene = SceneGT {
        primitives,
        workspace: Aabb::new(ws_min, ws_max),
        table_height,
    };

    let position = r.vec3()?;
    let look_at = r.vec3()?;
    let fx = r.f64()?;
    let fy = r.f64()?;
    let cx = r.f64()?;
    let cy = r.f64()?;
    let iw = r.u32()? as usize;
    let ih = r.u32()? as usize;
    let camera = CameraPose { position, look_at, intrinsics: (fx, fy, cx, cy, iw, ih) };

    let n_points = r.u32()? as usize;
    if n_points > 10_000_000 {
        return Err(Error::Data("implausible point count".into()));
    }
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        points.push(r.vec3()?);
    }
    let normals = if r.u8()? == 1 {
        let mut ns = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            ns.push(
                UnitVec3::new(r.vec3()?)
                    .map_err(|_| Error::Data("non-unit normal in record".into()))?,
            );
        }
        Some(ns)
    } else {
        None
    };
    let instance_ids = if r.u8()? == 1 {
        let mut ids = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            ids.push(r.u32()?);
        }
        Some(ids)
    } else {
        None
    };
    let semantic_ids = if r.u8()? == 1 {
        let mut ids = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            ids.push(r.u32()?);
        }
        Some(ids)
    } else {
        None
    };
    let cloud = PointCloud { points, normals, instance_ids, semantic_ids };
    cloud.validate().map_err(|e| Error::Data(format!("invalid cloud in record: {e}")))?;

    let n_grasps = r.u32()? as usize;
    if n_grasps > 1_000_000 {
        return Err(Error::Data("implausible grasp count".into()));
    }
    let mut grasps = Vec::with_capacity(n_grasps);
    for _ in 0..n_grasps {
        let contact = r.vec3()?;
        let normal = UnitVec3::new(r.vec3()?)
            .map_err(|_| Error::Data("non-unit grasp normal in record".into()))?;
        let n_alpha = r.u8()? as usize;
        let mut success = Vec::with_capacity(n_alpha);
        for _ in 0..n_alpha {
            success.push(r.u8()?);
        }
        let width = r.f64()?;
        let object_id = r.u32()?;
        if object_id as usize >= scene.primitives.len() {
            return Err(Error::Data("grasp object id out of range".into()));
        }
        grasps.push(GraspLabel { contact, normal, success, width, object_id });
    }

    let n_occ = r.u32()? as usize;
    if n_occ > 100_000_000 {
        return Err(Error::Data("implausible occupancy count".into()));
    }
    let k = r.u8()? as usize;
    if k != scene.primitives.len() {
        return Err(Error::Data("occupancy width does not match instance count".into()));
    }
    let mut occupancy = Vec::with_capacity(n_occ);
    for _ in 0..n_occ {
        let position = r.vec3()?;
        let mut inside = Vec::with_capacity(k);
        for _ in 0..k {
            inside.push(r.u8()?);
        }
        occupancy.push(OccupancySample { position, inside });
    }
    let near_frac = r.f64()?;

    Ok(LabeledScene { scene, camera, cloud, grasps, occupancy, near_frac })
}

/// Read every record listed by the manifest, in manifest order.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<LabeledScene>)> {
    let manifest = read_manifest(dir)?;
    let mut scenes = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        scenes.push(read_record(&dir.join(f))?);
    }
    Ok((manifest, scenes))
}
