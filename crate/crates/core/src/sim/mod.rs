//! Synthetic data factory: packed/pile primitive scenes, single-view depth
//! rendering with ground-truth labels, the analytic antipodal grasp oracle,
//! and occupancy label sampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{estimate_normals, remove_table, PointCloud, TABLE_ID};
use crate::error::{Error, Result};
use crate::fields::{
    check_grasp_collision, gt_field, GripperModel, Primitive, PrimitiveKind, SceneGT,
};
use crate::geom::{pose_at_angle, GraspConfig, GraspPose, RotMat, UnitVec3, Vec3};

pub mod dataset;

/// Friction coefficient of the antipodal cone test.
pub const ORACLE_FRICTION: f64 = 0.5;
/// Extra finger opening beyond the measured width during collision checks.
pub const ORACLE_CLEARANCE: f64 = 0.005;
/// Contacts farther than this from every primitive surface are rejected.
pub const CONTACT_SURFACE_TOL: f64 = 0.002;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Packed,
    Pile,
}

/// Pinhole camera with explicit intrinsics.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub look_at: Vec3,
    /// (fx, fy, cx, cy, width, height), pixels.
    pub intrinsics: (f64, f64, f64, f64, usize, usize),
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        let (fx, fy, _, _, w, h) = self.intrinsics;
        if (self.position - self.look_at).norm() < 1e-9 {
            return Err(Error::invalid_argument("camera position equals look_at"));
        }
        if fx <= 0.0 || fy <= 0.0 || w == 0 || h == 0 {
            return Err(Error::invalid_argument("camera intrinsics must be positive"));
        }
        Ok(())
    }

    /// Camera basis (right, down, forward) in world coordinates.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalized().unwrap().as_vec();
        let helper = if forward.z.abs() < 0.999 {
            Vec3::new(0.0, 0.0, 1.0)
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        let right = forward.cross(helper).normalized().unwrap().as_vec();
        let down = forward.cross(right);
        (right, down, forward)
    }
}

fn default_intrinsics() -> (f64, f64, f64, f64, usize, usize) {
    (180.0, 180.0, 120.0, 90.0, 240, 180)
}

/// Spherical camera sampling ranges.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            r_min: 0.48,
            r_max: 0.72,
            theta_min: 0.0,
            theta_max: std::f64::consts::FRAC_PI_4,
        }
    }
}

impl CameraConfig {
    /// Strictly top-down observations (polar angle within two degrees).
    pub fn top_down() -> Self {
        CameraConfig { theta_min: 0.0, theta_max: 2.0f64.to_radians(), ..Default::default() }
    }
}

/// One labeled grasp trial: contact, normal, per-angle success, width, and
/// the contacted object.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraspLabel {
    pub contact: Vec3,
    pub normal: UnitVec3,
    pub success: Vec<u8>,
    pub width: f64,
    pub object_id: u32,
}

/// One occupancy sample: position plus a {0,1} flag per instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccupancySample {
    pub position: Vec3,
    pub inside: Vec<u8>,
}

/// The serialized training record of one scene.
#[derive(Clone, Debug)]
pub struct LabeledScene {
    pub scene: SceneGT,
    pub camera: CameraPose,
    /// Rendered view after normal estimation and table removal.
    pub cloud: PointCloud,
    pub grasps: Vec<GraspLabel>,
    pub occupancy: Vec<OccupancySample>,
    /// Fraction of occupancy samples drawn near surfaces.
    pub near_frac: f64,
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

fn sample_primitive(rng: &mut ChaCha8Rng) -> (PrimitiveKind, Vec3) {
    match rng.gen_range(0..3) {
        0 => {
            let r = rng.gen_range(0.020..0.034);
            (PrimitiveKind::Sphere, Vec3::new(r, r, r))
        }
        1 => {
            let hx = rng.gen_range(0.014..0.034);
            let hy = rng.gen_range(0.014..0.034);
            let hz = rng.gen_range(0.020..0.050);
            (PrimitiveKind::Box, Vec3::new(hx, hy, hz))
        }
        _ => {
            let r = rng.gen_range(0.015..0.030);
            let h = rng.gen_range(0.050..0.120);
            (PrimitiveKind::Cylinder, Vec3::new(r, r, h))
        }
    }
}

/// Resting height of an upright primitive.
fn upright_rest_z(kind: PrimitiveKind, size: Vec3) -> f64 {
    match kind {
        PrimitiveKind::Sphere => size.x,
        PrimitiveKind::Box => size.z,
        PrimitiveKind::Cylinder => size.z / 2.0,
    }
}

fn uniform_rotation(rng: &mut ChaCha8Rng) -> RotMat {
    // Uniform quaternion (Shoemake), converted to a rotation matrix.
    let u1: f64 = rng.gen_range(0.0..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let u3: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y, z, w) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
    let c0 = Vec3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y + z * w),
        2.0 * (x * z - y * w),
    );
    let c1 = Vec3::new(
        2.0 * (x * y - z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z + x * w),
    );
    let c2 = Vec3::new(
        2.0 * (x * z + y * w),
        2.0 * (y * z - x * w),
        1.0 - 2.0 * (x * x + y * y),
    );
    RotMat::from_cols(c0, c1, c2).expect("unit quaternion yields a rotation")
}

/// Minimum surface separation between two primitives, from sampled surface
/// points in both directions.
fn surface_separation(a: &Primitive, b: &Primitive, seed: u64) -> f64 {
    let mut min_d = f64::INFINITY;
    for p in a.sample_surface(160, seed) {
        min_d = min_d.min(b.sdf(p));
    }
    for p in b.sample_surface(160, seed ^ 0x9e37) {
        min_d = min_d.min(a.sdf(p));
    }
    min_d
}

/// Random packed or pile scene with `k` primitives. Packed scenes place
/// upright primitives with at least 5 mm pairwise surface separation; pile
/// scenes drop randomly oriented primitives quasi-statically (no dynamics).
pub fn generate_scene(kind: SceneKind, k: usize, seed: u64) -> Result<SceneGT> {
    if !(1..=8).contains(&k) {
        return Err(Error::invalid_argument("k must lie in [1, 8]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let workspace = crate::fields::default_workspace();
    let mut prims: Vec<Primitive> = Vec::with_capacity(k);
    let mut attempts = 0usize;

    while prims.len() < k {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Generation(format!(
                "could not place primitive {} of {k} after {attempts} attempts",
                prims.len() + 1
            )));
        }
        let (pk, size) = sample_primitive(&mut rng);
        let margin = match pk {
            PrimitiveKind::Sphere => size.x,
            PrimitiveKind::Box => (size.x * size.x + size.y * size.y).sqrt(),
            PrimitiveKind::Cylinder => size.x.max(size.z / 2.0),
        } + 0.01;
        let x = rng.gen_range(workspace.min.x + margin..workspace.max.x - margin);
        let y = rng.gen_range(workspace.min.y + margin..workspace.max.y - margin);

        let candidate = match kind {
            SceneKind::Packed => {
                let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
                let pose = GraspPose::new(
                    RotMat::rot_z(yaw),
                    Vec3::new(x, y, upright_rest_z(pk, size)),
                );
                Primitive::new(pk, pose, size)
            }
            SceneKind::Pile => {
                let rot = uniform_rotation(&mut rng);
                let mut prim = Primitive::new(
                    pk,
                    GraspPose::new(rot, Vec3::new(x, y, workspace.max.z)),
                    size,
                );
                // Quasi-static settle: binary-search the largest drop that
                // keeps the solid clear of the table and earlier objects.
                let surf = prim.sample_surface(256, rng.gen());
                let min_z = surf.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
                let table_drop = min_z - 0.001;
                let clear = |drop: f64| -> bool {
                    surf.iter().all(|p| {
                        let q = *p - Vec3::new(0.0, 0.0, drop);
                        q.z >= 0.0005 && prims.iter().all(|o| o.sdf(q) > 0.0005)
                    })
                };
                let (mut lo, mut hi) = (0.0f64, table_drop.max(0.0));
                if !clear(lo) {
                    continue;
                }
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if clear(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                prim.pose.translation.z -= lo;
                prim
            }
        };

        let sep = match kind {
            SceneKind::Packed => 0.005,
            SceneKind::Pile => 0.0,
        };
        let ok = prims
            .iter()
            .enumerate()
            .all(|(i, other)| surface_separation(&candidate, other, seed ^ (i as u64) << 8) >= sep);
        if ok {
            prims.push(candidate);
        }
    }
    Ok(SceneGT { primitives: prims, workspace, table_height: 0.0 })
}

// ---------------------------------------------------------------------------
// Camera sampling and depth rendering
// ---------------------------------------------------------------------------

/// Camera pose uniform over the configured spherical shell, looking at the
/// workspace center.
pub fn sample_camera_with(cfg: &CameraConfig, seed: u64) -> CameraPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = crate::fields::default_workspace().center();
    let r = rng.gen_range(cfg.r_min..=cfg.r_max);
    let theta = rng.gen_range(cfg.theta_min..=cfg.theta_max);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let position = center
        + Vec3::new(
            r * theta.sin() * phi.cos(),
            r * theta.sin() * phi.sin(),
            r * theta.cos(),
        );
    CameraPose { position, look_at: center, intrinsics: default_intrinsics() }
}

/// Default viewpoint randomization (r in [0.48, 0.72], polar angle up to 45
/// degrees, azimuth free).
pub fn sample_camera(seed: u64) -> CameraPose {
    sample_camera_with(&CameraConfig::default(), seed)
}

/// Ray-cast depth view of the scene: per-pixel nearest hit against the
/// primitives and the table plane, unprojected to world points carrying the
/// hit instance/class ids (table points carry [`TABLE_ID`]).
pub fn render_depth(scene: &SceneGT, cam: &CameraPose) -> Result<PointCloud> {
    cam.validate()?;
    let (fx, fy, cx, cy, w, h) = cam.intrinsics;
    let (right, down, forward) = cam.basis();

    let mut points = Vec::new();
    let mut instance_ids = Vec::new();
    let mut semantic_ids = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let dir_cam = Vec3::new(
                (u as f64 + 0.5 - cx) / fx,
                (v as f64 + 0.5 - cy) / fy,
                1.0,
            );
            let dir = (right * dir_cam.x + down * dir_cam.y + forward * dir_cam.z)
                .normalized()
                .unwrap()
                .as_vec();

            let mut best_t = f64::INFINITY;
            let mut best_ids: Option<(u32, u32)> = None;
            for (idx, prim) in scene.primitives.iter().enumerate() {
                if let Some((t_in, t_out)) = prim.ray_intersections(cam.position, dir) {
                    if t_out >= 1e-9 {
                        let t = t_in.max(1e-9);
                        if t < best_t {
                            best_t = t;
                            best_ids = Some((idx as u32, prim.class_id));
                        }
                    }
                }
            }
            // Table plane, clipped to the workspace footprint.
            if dir.z < -1e-12 {
                let t = (scene.table_height - cam.position.z) / dir.z;
                if t > 0.0 && t < best_t {
                    let hit = cam.position + dir * t;
                    if hit.x >= scene.workspace.min.x
                        && hit.x <= scene.workspace.max.x
                        && hit.y >= scene.workspace.min.y
                        && hit.y <= scene.workspace.max.y
                    {
                        best_t = t;
                        best_ids = Some((TABLE_ID, TABLE_ID));
                    }
                }
            }
            if let Some((inst, sem)) = best_ids {
                points.push(cam.position + dir * best_t);
                instance_ids.push(inst);
                semantic_ids.push(sem);
            }
        }
    }
    Ok(PointCloud {
        points,
        normals: None,
        instance_ids: Some(instance_ids),
        semantic_ids: Some(semantic_ids),
    })
}

// ---------------------------------------------------------------------------
// The antipodal grasp oracle
// ---------------------------------------------------------------------------

/// Everything the oracle decided about one (contact, angle) trial.
#[derive(Clone, Copy, Debug)]
pub struct OracleOutcome {
    pub success: bool,
    pub width: f64,
    pub object_id: u32,
}

/// Width and antipodal checks for a contact, shared across approach angles.
struct ContactGeometry {
    object: usize,
    width: f64,
    antipodal_ok: bool,
}

fn contact_geometry(
    scene: &SceneGT,
    contact: Vec3,
    normal: UnitVec3,
    cfg: &GraspConfig,
) -> Result<ContactGeometry> {
    // The contacted primitive is the one whose surface is nearest.
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in scene.primitives.iter().enumerate() {
        let d = p.sdf(contact).abs();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let (object, dist) = best.ok_or_else(|| Error::invalid_argument("scene has no primitives"))?;
    if dist > CONTACT_SURFACE_TOL {
        return Err(Error::invalid_argument(format!(
            "contact is {dist:.4} m from the nearest surface"
        )));
    }
    let prim = &scene.primitives[object];

    // Chord through the object along the negated normal.
    let dir = -normal.as_vec();
    let exit_t = prim
        .ray_intersections(contact, dir)
        .map(|(_, t_out)| t_out)
        .unwrap_or(0.0);
    if exit_t <= 1e-6 {
        return Ok(ContactGeometry { object, width: 0.0, antipodal_ok: false });
    }
    let width = exit_t;
    let exit_point = contact + dir * exit_t;
    let exit_normal = prim.surface_normal(exit_point);

    // Friction cone: angle(n, −n₂) within atan(μ).
    let cos_limit = 1.0 / (1.0 + ORACLE_FRICTION * ORACLE_FRICTION).sqrt();
    let antipodal_ok = width <= cfg.w_max
        && normal.as_vec().dot(-exit_normal.as_vec()) >= cos_limit;
    Ok(ContactGeometry { object, width, antipodal_ok })
}

/// Analytic grasp trial: success iff the chord along −normal exits the same
/// primitive within the gripper width, the opposing normals are antipodal
/// within the friction cone, and the gripper (opened with clearance) clears
/// the table and every other object.
pub fn oracle_grasp(
    scene: &SceneGT,
    contact: Vec3,
    normal: UnitVec3,
    alpha: f64,
    cfg: &GraspConfig,
    gripper: &GripperModel,
) -> Result<OracleOutcome> {
    let geo = contact_geometry(scene, contact, normal, cfg)?;
    if !geo.antipodal_ok {
        return Ok(OracleOutcome { success: false, width: geo.width, object_id: geo.object as u32 });
    }
    let pose = pose_at_angle(contact, normal, geo.width, alpha, cfg)?;
    let opened = (geo.width + ORACLE_CLEARANCE).min(cfg.w_max);
    let field = gt_field(scene);
    let collides = check_grasp_collision(
        &pose,
        opened,
        geo.object,
        &field,
        gripper,
        scene.table_height,
        0.5,
    )?;
    Ok(OracleOutcome {
        success: !collides,
        width: geo.width,
        object_id: geo.object as u32,
    })
}

/// Evaluate the oracle for every approach angle of one contact.
pub fn oracle_grasp_all_angles(
    scene: &SceneGT,
    contact: Vec3,
    normal: UnitVec3,
    cfg: &GraspConfig,
    gripper: &GripperModel,
) -> Result<GraspLabel> {
    let geo = contact_geometry(scene, contact, normal, cfg)?;
    let angles = crate::geom::approach_angles(cfg);
    let mut success = vec![0u8; angles.len()];
    if geo.antipodal_ok {
        let field = gt_field(scene);
        let opened = (geo.width + ORACLE_CLEARANCE).min(cfg.w_max);
        for (i, &alpha) in angles.iter().enumerate() {
            let pose = pose_at_angle(contact, normal, geo.width, alpha, cfg)?;
            let collides = check_grasp_collision(
                &pose,
                opened,
                geo.object,
                &field,
                gripper,
                scene.table_height,
                0.5,
            )?;
            success[i] = u8::from(!collides);
        }
    }
    Ok(GraspLabel {
        contact,
        normal,
        success,
        width: geo.width,
        object_id: geo.object as u32,
    })
}

/// Sample contact points from the object-labeled view cloud and label every
/// approach angle with the oracle.
pub fn sample_grasp_labels(
    scene: &SceneGT,
    view: &PointCloud,
    n_contacts: usize,
    cfg: &GraspConfig,
    gripper: &GripperModel,
    seed: u64,
) -> Result<Vec<GraspLabel>> {
    let normals = view
        .normals
        .as_ref()
        .ok_or_else(|| Error::invalid_argument("view cloud has no normals"))?;
    let object_idx: Vec<usize> = match &view.instance_ids {
        Some(ids) => (0..view.len()).filter(|&i| ids[i] != TABLE_ID).collect(),
        None => (0..view.len()).collect(),
    };
    if object_idx.is_empty() || n_contacts == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(n_contacts);
    for _ in 0..n_contacts {
        let i = object_idx[rng.gen_range(0..object_idx.len())];
        match oracle_grasp_all_angles(scene, view.points[i], normals[i], cfg, gripper) {
            Ok(label) => labels.push(label),
            // Points that drifted off-surface (augmentation, normal noise)
            // simply produce no label.
            Err(Error::InvalidArgument(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(labels)
}

/// Occupancy label sampling: (1 − near_frac)·n uniform in the workspace plus
/// near_frac·n surface points with isotropic Gaussian offsets (sigma = band),
/// each labeled per instance by the sign of the exact distance.
pub fn sample_occupancy(
    scene: &SceneGT,
    n: usize,
    near_frac: f64,
    band: f64,
    seed: u64,
) -> Result<Vec<OccupancySample>> {
    if !(0.0..=1.0).contains(&near_frac) {
        return Err(Error::invalid_argument("near_frac must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_near = (near_frac * n as f64).round() as usize;
    let n_uniform = n - n_near;
    let ws = scene.workspace;
    let ext = ws.extent();
    let gaussian = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };

    let mut out = Vec::with_capacity(n);
    let label = |p: Vec3| -> Vec<u8> {
        scene.primitives.iter().map(|prim| u8::from(prim.sdf(p) <= 0.0)).collect()
    };
    for _ in 0..n_uniform {
        let p = Vec3::new(
            ws.min.x + rng.gen_range(0.0..1.0) * ext.x,
            ws.min.y + rng.gen_range(0.0..1.0) * ext.y,
            ws.min.z + rng.gen_range(0.0..1.0) * ext.z,
        );
        out.push(OccupancySample { position: p, inside: label(p) });
    }
    for _ in 0..n_near {
        let prim = &scene.primitives[rng.gen_range(0..scene.primitives.len())];
        let base = prim.sample_surface(1, rng.gen())[0];
        let p = base + Vec3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * band;
        out.push(OccupancySample { position: p, inside: label(p) });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full labeled-scene generation
// ---------------------------------------------------------------------------

fn default_scene_kind() -> SceneKind {
    SceneKind::Packed
}
fn default_k_min() -> usize {
    1
}
fn default_k_max() -> usize {
    4
}
fn default_n_contacts() -> usize {
    64
}
fn default_n_occupancy() -> usize {
    2000
}
fn default_near_frac() -> f64 {
    0.3
}
fn default_band() -> f64 {
    0.01
}
fn default_normals_k() -> usize {
    16
}
fn default_table_eps() -> f64 {
    0.002
}

/// Per-scene generation settings. The paper-scale occupancy count (200'000
/// per scene, 70% uniform / 30% near-surface) is available by raising
/// `n_occupancy`; the desk-scale default keeps datasets small.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGenConfig {
    #[serde(default = "default_scene_kind")]
    pub kind: SceneKind,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_n_contacts")]
    pub n_contacts: usize,
    #[serde(default = "default_n_occupancy")]
    pub n_occupancy: usize,
    #[serde(default = "default_near_frac")]
    pub near_frac: f64,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_normals_k")]
    pub normals_k: usize,
    /// Points below this height count as table and are removed.
    #[serde(default = "default_table_eps")]
    pub table_eps: f64,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub grasp: GraspConfig,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// Derive the per-scene seed from a base seed and the scene index.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    let mut x = base ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Generate one fully labeled scene: geometry, rendered view (with estimated
/// normals, table removed), grasp labels, and occupancy samples.
pub fn generate_labeled_scene(cfg: &SceneGenConfig, seed: u64) -> Result<LabeledScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(cfg.k_min..=cfg.k_max);
    let scene = generate_scene(cfg.kind, k, rng.gen())?;
    let camera = sample_camera_with(&cfg.camera, rng.gen());
    let rendered = render_depth(&scene, &camera)?;
    let with_normals = estimate_normals(&rendered, cfg.normals_k, camera.position)?;
    let cloud = remove_table(&with_normals, cfg.table_eps);
    let gripper = GripperModel::new(cfg.grasp.w_max, 0.002);
    let grasps = sample_grasp_labels(&scene, &cloud, cfg.n_contacts, &cfg.grasp, &gripper, rng.gen())?;
    let occupancy = sample_occupancy(&scene, cfg.n_occupancy, cfg.near_frac, cfg.band, rng.gen())?;
    Ok(LabeledScene { scene, camera, cloud, grasps, occupancy, near_frac: cfg.near_frac })
}
