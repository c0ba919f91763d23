//! Analytic occupancy / signed-distance fields for primitive shapes,
//! field composition, iso-surface meshing, reconstruction metrics, gripper
//! collision checking, and implicit-surface resampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{Aabb, GraspPose, UnitVec3, Vec3};

mod march;
mod mc_tables;
pub mod mesh_io;
pub mod metrics;

pub use march::marching_cubes;
pub use metrics::{chamfer_l1, volumetric_iou};

/// Semantic class ids of the primitive kinds.
pub const CLASS_SPHERE: u32 = 0;
pub const CLASS_BOX: u32 = 1;
pub const CLASS_CYLINDER: u32 = 2;
pub const CLASS_OTHER: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Sphere,
    Box,
    Cylinder,
}

impl PrimitiveKind {
    pub fn class_id(self) -> u32 {
        match self {
            PrimitiveKind::Sphere => CLASS_SPHERE,
            PrimitiveKind::Box => CLASS_BOX,
            PrimitiveKind::Cylinder => CLASS_CYLINDER,
        }
    }
}

/// A posed solid. `size` is interpreted per kind: the sphere uses x as its
/// radius; the box uses all three components as half-extents; the cylinder
/// uses x as its radius and z as its full height (centered on the origin).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub pose: GraspPose,
    pub size: Vec3,
    pub class_id: u32,
}

impl Primitive {
    pub fn new(kind: PrimitiveKind, pose: GraspPose, size: Vec3) -> Self {
        Primitive { kind, pose, size, class_id: kind.class_id() }
    }

    /// Exact signed distance: negative inside, zero on the surface.
    pub fn sdf(&self, x: Vec3) -> f64 {
        let p = self.pose.inverse_transform_point(x);
        match self.kind {
            PrimitiveKind::Sphere => p.norm() - self.size.x,
            PrimitiveKind::Box => {
                let q = Vec3::new(
                    p.x.abs() - self.size.x,
                    p.y.abs() - self.size.y,
                    p.z.abs() - self.size.z,
                );
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            PrimitiveKind::Cylinder => {
                let radial = (p.x * p.x + p.y * p.y).sqrt() - self.size.x;
                let axial = p.z.abs() - self.size.z / 2.0;
                let outside = (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt();
                let inside = radial.max(axial).min(0.0);
                outside + inside
            }
        }
    }

    /// Outward unit surface normal near `x` (meaningful for points on or near
    /// the surface). Face/side selection at edges picks the dominant axis.
    pub fn surface_normal(&self, x: Vec3) -> UnitVec3 {
        let p = self.pose.inverse_transform_point(x);
        let local = match self.kind {
            PrimitiveKind::Sphere => p
                .normalized()
                .map(|u| u.as_vec())
                .unwrap_or(Vec3::new(0.0, 0.0, 1.0)),
            PrimitiveKind::Box => {
                let q = [
                    p.x.abs() - self.size.x,
                    p.y.abs() - self.size.y,
                    p.z.abs() - self.size.z,
                ];
                let mut axis = 0;
                for i in 1..3 {
                    if q[i] > q[axis] {
                        axis = i;
                    }
                }
                let comp = [p.x, p.y, p.z][axis];
                let s = if comp >= 0.0 { 1.0 } else { -1.0 };
                match axis {
                    0 => Vec3::new(s, 0.0, 0.0),
                    1 => Vec3::new(0.0, s, 0.0),
                    _ => Vec3::new(0.0, 0.0, s),
                }
            }
            PrimitiveKind::Cylinder => {
                let radial = (p.x * p.x + p.y * p.y).sqrt() - self.size.x;
                let axial = p.z.abs() - self.size.z / 2.0;
                if axial > radial {
                    Vec3::new(0.0, 0.0, if p.z >= 0.0 { 1.0 } else { -1.0 })
                } else {
                    Vec3::new(p.x, p.y, 0.0)
                        .normalized()
                        .map(|u| u.as_vec())
                        .unwrap_or(Vec3::new(1.0, 0.0, 0.0))
                }
            }
        };
        UnitVec3::new(self.pose.rotation.mul_vec(local)).expect("unit normal")
    }

    /// Entry/exit parameters of the line `origin + t·dir` through the solid,
    /// or `None` when the line misses. `t_in <= t_out`; both may be negative.
    pub fn ray_intersections(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let o = self.pose.inverse_transform_point(origin);
        let d = self.pose.rotation.tr_mul_vec(dir);
        match self.kind {
            PrimitiveKind::Sphere => {
                let a = d.norm_sq();
                let b = 2.0 * o.dot(d);
                let c = o.norm_sq() - self.size.x * self.size.x;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 || a == 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / (2.0 * a), (-b + s) / (2.0 * a)))
            }
            PrimitiveKind::Box => {
                let mut t_in = f64::NEG_INFINITY;
                let mut t_out = f64::INFINITY;
                for (oc, dc, h) in [
                    (o.x, d.x, self.size.x),
                    (o.y, d.y, self.size.y),
                    (o.z, d.z, self.size.z),
                ] {
                    if dc.abs() < 1e-15 {
                        if oc.abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let (mut t0, mut t1) = ((-h - oc) / dc, (h - oc) / dc);
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    t_in = t_in.max(t0);
                    t_out = t_out.min(t1);
                }
                (t_in <= t_out).then_some((t_in, t_out))
            }
            PrimitiveKind::Cylinder => {
                let half = self.size.z / 2.0;
                let (mut t_in, mut t_out) = if d.z.abs() < 1e-15 {
                    if o.z.abs() > half {
                        return None;
                    }
                    (f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    let (mut t0, mut t1) = ((-half - o.z) / d.z, (half - o.z) / d.z);
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    (t0, t1)
                };
                let a = d.x * d.x + d.y * d.y;
                if a < 1e-30 {
                    if o.x * o.x + o.y * o.y > self.size.x * self.size.x {
                        return None;
                    }
                } else {
                    let b = 2.0 * (o.x * d.x + o.y * d.y);
                    let c = o.x * o.x + o.y * o.y - self.size.x * self.size.x;
                    let disc = b * b - 4.0 * a * c;
                    if disc < 0.0 {
                        return None;
                    }
                    let s = disc.sqrt();
                    t_in = t_in.max((-b - s) / (2.0 * a));
                    t_out = t_out.min((-b + s) / (2.0 * a));
                }
                (t_in <= t_out).then_some((t_in, t_out))
            }
        }
    }

    /// Radius of a bounding sphere around the primitive's origin.
    pub fn bounding_radius(&self) -> f64 {
        match self.kind {
            PrimitiveKind::Sphere => self.size.x,
            PrimitiveKind::Box => self.size.norm(),
            PrimitiveKind::Cylinder => {
                (self.size.x * self.size.x + self.size.z * self.size.z / 4.0).sqrt()
            }
        }
    }

    /// Deterministic quasi-uniform points on the surface.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let local = match self.kind {
                PrimitiveKind::Sphere => random_unit_vec(&mut rng) * self.size.x,
                PrimitiveKind::Box => {
                    // Pick a face area-weighted, then a uniform point on it.
                    let h = self.size;
                    let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
                    let total: f64 = areas.iter().sum::<f64>() * 2.0;
                    let mut pick = rng.gen_range(0.0..total);
                    let mut face = 2;
                    for (i, &a) in areas.iter().enumerate() {
                        if pick < 2.0 * a {
                            face = i;
                            break;
                        }
                        pick -= 2.0 * a;
                    }
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let u = rng.gen_range(-1.0..1.0);
                    let v = rng.gen_range(-1.0..1.0);
                    match face {
                        0 => Vec3::new(sign * h.x, u * h.y, v * h.z),
                        1 => Vec3::new(u * h.x, sign * h.y, v * h.z),
                        _ => Vec3::new(u * h.x, v * h.y, sign * h.z),
                    }
                }
                PrimitiveKind::Cylinder => {
                    let r = self.size.x;
                    let h = self.size.z;
                    let side_area = std::f64::consts::TAU * r * h;
                    let cap_area = std::f64::consts::PI * r * r;
                    let total = side_area + 2.0 * cap_area;
                    let pick = rng.gen_range(0.0..total);
                    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                    if pick < side_area {
                        let z = rng.gen_range(-0.5..0.5) * h;
                        Vec3::new(r * phi.cos(), r * phi.sin(), z)
                    } else {
                        let rad = r * rng.gen_range(0.0f64..1.0).sqrt();
                        let sign = if pick < side_area + cap_area { 1.0 } else { -1.0 };
                        Vec3::new(rad * phi.cos(), rad * phi.sin(), sign * h / 2.0)
                    }
                }
            };
            out.push(self.pose.transform_point(local));
        }
        out
    }

    /// Lowest world-z offset of the surface relative to the origin, from a
    /// coarse surface sampling (used for resting placement).
    pub fn support_offset(&self) -> f64 {
        let mut min_z = f64::INFINITY;
        for p in self.sample_surface(512, 7) {
            min_z = min_z.min(p.z - self.pose.translation.z);
        }
        min_z
    }
}

fn random_unit_vec(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

/// Default 0.3 m tabletop workspace: table plane at z = 0.
pub fn default_workspace() -> Aabb {
    Aabb::new(Vec3::new(-0.15, -0.15, 0.0), Vec3::new(0.15, 0.15, 0.3))
}

/// Ground-truth scene: posed primitives in a tabletop workspace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneGT {
    pub primitives: Vec<Primitive>,
    pub workspace: Aabb,
    pub table_height: f64,
}

impl SceneGT {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        SceneGT { primitives, workspace: default_workspace(), table_height: 0.0 }
    }

    pub fn num_instances(&self) -> usize {
        self.primitives.len()
    }

    /// Scene with one primitive removed (declutter bookkeeping).
    pub fn without(&self, index: usize) -> SceneGT {
        let mut prims = self.primitives.clone();
        prims.remove(index);
        SceneGT { primitives: prims, workspace: self.workspace, table_height: self.table_height }
    }
}

// ---------------------------------------------------------------------------
// Occupancy fields
// ---------------------------------------------------------------------------

/// A per-instance occupancy field: probabilities in [0, 1], one per instance.
pub trait OccupancyField: Sync {
    fn num_instances(&self) -> usize;

    /// Write the K per-instance occupancy probabilities at `x` into `out`.
    fn eval_into(&self, x: Vec3, out: &mut [f64]);

    fn eval(&self, x: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.num_instances()];
        self.eval_into(x, &mut out);
        out
    }

    /// Scene-level occupancy excluding one instance channel.
    fn max_excluding(&self, x: Vec3, excluded: usize) -> f64 {
        let vals = self.eval(x);
        vals.iter()
            .enumerate()
            .filter(|(i, _)| *i != excluded)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }
}

/// Hard ground-truth occupancy derived from primitive signed distances.
///
/// Per-primitive bounding spheres short-circuit evaluations far from every
/// surface; the result is identical to the raw distance test.
#[derive(Clone)]
pub struct GtField {
    scene: SceneGT,
    bound_sq: Vec<f64>,
}

impl GtField {
    pub fn scene(&self) -> &SceneGT {
        &self.scene
    }
}

impl OccupancyField for GtField {
    fn num_instances(&self) -> usize {
        self.scene.primitives.len()
    }

    fn eval_into(&self, x: Vec3, out: &mut [f64]) {
        for (i, p) in self.scene.primitives.iter().enumerate() {
            out[i] = if (x - p.pose.translation).norm_sq() <= self.bound_sq[i]
                && p.sdf(x) <= 0.0
            {
                1.0
            } else {
                0.0
            };
        }
    }

    fn max_excluding(&self, x: Vec3, excluded: usize) -> f64 {
        for (i, p) in self.scene.primitives.iter().enumerate() {
            if i == excluded {
                continue;
            }
            if (x - p.pose.translation).norm_sq() <= self.bound_sq[i] && p.sdf(x) <= 0.0 {
                return 1.0;
            }
        }
        0.0
    }
}

/// Hard per-instance occupancy field of a ground-truth scene.
pub fn gt_field(scene: &SceneGT) -> GtField {
    let bound_sq = scene
        .primitives
        .iter()
        .map(|p| {
            let r = p.bounding_radius() + 1e-9;
            r * r
        })
        .collect();
    GtField { scene: scene.clone(), bound_sq }
}

/// Scene-level occupancy: the maximum over the per-instance values.
pub fn scene_occupancy(field: &dyn OccupancyField, x: Vec3) -> f64 {
    field.eval(x).into_iter().fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Gripper model and collision checking
// ---------------------------------------------------------------------------

pub const FINGER_LEN: f64 = 0.045;
pub const FINGER_THICKNESS: f64 = 0.008;
pub const FINGER_WIDTH: f64 = 0.016;
pub const PALM_DEPTH: f64 = 0.02;
pub const PALM_HALF_X: f64 = 0.015;

/// Point-sampled parallel-jaw gripper used as a collision proxy.
///
/// Gripper frame: +y is the closing axis, +z the approach axis pointing from
/// the fingertip plane (z = 0, through the tool-center point) back toward the
/// wrist. The tool-center convention t = c + ((w_max − w)/2)·n places the
/// closing centerline at y = −w_max/2, so the two finger slabs sit at
/// y = −w_max/2 ± w_open/2 when opened to w_open.
#[derive(Clone, Debug)]
pub struct GripperModel {
    /// Offsets within one finger slab: x lateral, y outward from the inner
    /// face, z along the finger toward the wrist.
    finger_offsets: Vec<Vec3>,
    /// Palm slab points relative to the closing centerline.
    palm_points: Vec<Vec3>,
    pub w_max: f64,
}

impl GripperModel {
    /// Sample the finger and palm slabs at the given pitch (≤ 2 mm for the
    /// collision contract).
    pub fn new(w_max: f64, pitch: f64) -> Self {
        let lin = |len: f64| -> Vec<f64> {
            let n = (len / pitch).ceil() as usize + 1;
            (0..n).map(|i| len * i as f64 / (n - 1).max(1) as f64).collect()
        };

        let mut finger_offsets = Vec::new();
        for x in lin(FINGER_WIDTH) {
            for y in lin(FINGER_THICKNESS) {
                for z in lin(FINGER_LEN) {
                    finger_offsets.push(Vec3::new(x - FINGER_WIDTH / 2.0, y, z));
                }
            }
        }
        let mut palm_points = Vec::new();
        let palm_y = w_max + 2.0 * FINGER_THICKNESS + 0.004;
        for x in lin(2.0 * PALM_HALF_X) {
            for y in lin(palm_y) {
                for z in lin(PALM_DEPTH) {
                    palm_points.push(Vec3::new(x - PALM_HALF_X, y - palm_y / 2.0, z + FINGER_LEN));
                }
            }
        }
        GripperModel { finger_offsets, palm_points, w_max }
    }

    /// All sample points in the gripper frame with the fingers opened to
    /// `w_open` (clamped to [0, w_max]).
    pub fn points_at_width(&self, w_open: f64) -> Vec<Vec3> {
        let w = w_open.clamp(0.0, self.w_max);
        let centerline = -self.w_max / 2.0;
        let mut out = Vec::with_capacity(2 * self.finger_offsets.len() + self.palm_points.len());
        for off in &self.finger_offsets {
            // Finger on the +y side of the centerline, then its mirror.
            out.push(Vec3::new(off.x, centerline + w / 2.0 + off.y, off.z));
            out.push(Vec3::new(off.x, centerline - w / 2.0 - off.y, off.z));
        }
        for p in &self.palm_points {
            out.push(Vec3::new(p.x, centerline + p.y, p.z));
        }
        out
    }
}

impl Default for GripperModel {
    fn default() -> Self {
        GripperModel::new(0.08, 0.002)
    }
}

/// True when the gripper at `pose`, opened to `width`, collides with the
/// table or with any instance other than `target` (occupancy above
/// `occ_thresh` at any sample point).
pub fn check_grasp_collision(
    pose: &GraspPose,
    width: f64,
    target: usize,
    field: &dyn OccupancyField,
    gripper: &GripperModel,
    table_height: f64,
    occ_thresh: f64,
) -> Result<bool> {
    if target >= field.num_instances() {
        return Err(Error::invalid_argument(format!(
            "target {target} out of range for {} instances",
            field.num_instances()
        )));
    }
    for p in gripper.points_at_width(width) {
        let w = pose.transform_point(p);
        if w.z < table_height {
            return Ok(true);
        }
        if field.max_excluding(w, target) > occ_thresh {
            return Ok(true);
        }
    }
    Ok(false)
}

// ---------------------------------------------------------------------------
// Implicit-surface resampling
// ---------------------------------------------------------------------------

/// Direction of steepest increase of a scalar field at `p`, estimated from
/// antipodal central differences over a fixed spherical direction set.
///
/// The 3-pair axis version is the plain central difference and stays exact
/// for smooth fields; the extra directions keep the estimate accurate on
/// hard 0/1 occupancy where axis probes alone quantize the direction.
fn field_gradient(f: &dyn Fn(Vec3) -> f64, p: Vec3, h: f64) -> Vec3 {
    const N: usize = 128;
    let ga = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut grad = Vec3::ZERO;
    for i in 0..N {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / N as f64;
        let r = (1.0 - z * z).sqrt();
        let th = ga * i as f64;
        let d = Vec3::new(r * th.cos(), r * th.sin(), z);
        let diff = f(p + d * h) - f(p - d * h);
        grad = grad + d * diff;
    }
    // E[d dᵀ] = I/3 over the sphere, so 3/(2hN) recovers the gradient scale.
    grad * (3.0 / (2.0 * h * N as f64))
}

/// Find up to `n` points where the instance's occupancy crosses 0.5, by
/// bisection along random axis-aligned rays through `bounds`. Normals come
/// from the estimated field gradient, oriented toward decreasing occupancy
/// (outward).
pub fn resample_surface(
    field: &dyn OccupancyField,
    instance: usize,
    n: usize,
    bounds: Aabb,
    seed: u64,
) -> Result<PointCloud> {
    if n < 1 {
        return Err(Error::invalid_argument("n must be >= 1"));
    }
    if instance >= field.num_instances() {
        return Err(Error::invalid_argument("instance out of range"));
    }
    let occ = |x: Vec3| -> f64 { field.eval(x)[instance] };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let ext = bounds.extent();
    let steps = 96usize;
    let max_rays = 40 * n;

    'rays: for _ in 0..max_rays {
        if points.len() >= n {
            break;
        }
        let axis = rng.gen_range(0..3usize);
        let u = rng.gen_range(0.0..1.0);
        let v = rng.gen_range(0.0..1.0);
        let (origin, dir, len) = match axis {
            0 => (
                Vec3::new(bounds.min.x, bounds.min.y + u * ext.y, bounds.min.z + v * ext.z),
                Vec3::new(1.0, 0.0, 0.0),
                ext.x,
            ),
            1 => (
                Vec3::new(bounds.min.x + u * ext.x, bounds.min.y, bounds.min.z + v * ext.z),
                Vec3::new(0.0, 1.0, 0.0),
                ext.y,
            ),
            _ => (
                Vec3::new(bounds.min.x + u * ext.x, bounds.min.y + v * ext.y, bounds.min.z),
                Vec3::new(0.0, 0.0, 1.0),
                ext.z,
            ),
        };
        let dt = len / steps as f64;
        let mut prev = occ(origin);
        let mut prev_t = 0.0;
        for i in 1..=steps {
            let t = i as f64 * dt;
            let val = occ(origin + dir * t);
            if (prev < 0.5) != (val < 0.5) {
                // Bisect the bracket [prev_t, t].
                let (mut lo, mut hi) = (prev_t, t);
                let mut f_lo = prev;
                let mut mid = 0.5 * (lo + hi);
                for _ in 0..60 {
                    mid = 0.5 * (lo + hi);
                    let fm = occ(origin + dir * mid);
                    if (fm - 0.5).abs() <= 1e-3 || (hi - lo) < 1e-6 {
                        break;
                    }
                    if (f_lo < 0.5) == (fm < 0.5) {
                        lo = mid;
                        f_lo = fm;
                    } else {
                        hi = mid;
                    }
                }
                let p = origin + dir * mid;
                let grad = field_gradient(&occ, p, 1e-3);
                // Occupancy increases inward; outward is the negated gradient.
                if let Ok(normal) = (-grad).normalized() {
                    points.push(p);
                    normals.push(normal);
                    if points.len() >= n {
                        break 'rays;
                    }
                }
            }
            prev = val;
            prev_t = t;
        }
    }

    let count = points.len();
    Ok(PointCloud {
        points,
        normals: Some(normals),
        instance_ids: Some(vec![instance as u32; count]),
        semantic_ids: None,
    })
}

// ---------------------------------------------------------------------------
// Meshes
// ---------------------------------------------------------------------------

/// Triangle mesh with indexed vertices.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: [u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        (b - a).cross(c - a).norm() * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(*t)).sum()
    }

    /// V − E + F with edges counted once per undirected pair.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Every edge is shared by at most two triangles.
    pub fn has_manifold_edges(&self) -> bool {
        let mut counts = std::collections::HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0u32) += 1;
            }
        }
        counts.values().all(|&c| c <= 2)
    }

    /// Closed when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        let mut counts = std::collections::HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0u32) += 1;
            }
        }
        !self.triangles.is_empty() && counts.values().all(|&c| c == 2)
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            lo = lo.min_comp(*v);
            hi = hi.max_comp(*v);
        }
        Some(Aabb::new(lo, hi))
    }
}

#[cfg(test)]
mod tests;
