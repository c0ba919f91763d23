//! Contact-grasp geometry.
//!
//! A grasp is parameterized by a surface contact point, the surface normal
//! (the closing direction of the jaws), per-approach-angle affordance scores,
//! and a gripper width. This module turns that representation into concrete
//! SE(3) pose sets: the closing axis stays pinned to the normal while the
//! approach direction sweeps a discretized half-circle in the plane
//! perpendicular to it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for unit-norm and orthonormality invariants.
pub const ORTHO_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Vectors
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn min_comp(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_comp(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    /// Normalize into a unit vector; errors on near-zero input.
    pub fn normalized(self) -> Result<UnitVec3> {
        let n = self.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid_argument(format!(
                "cannot normalize vector with norm {n}"
            )));
        }
        Ok(UnitVec3(self.scale(1.0 / n)))
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

/// A direction with unit Euclidean norm (within [`ORTHO_TOL`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec3", into = "Vec3")]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    /// Wrap a vector that is already unit length; errors otherwise.
    pub fn new(v: Vec3) -> Result<Self> {
        if !v.is_finite() || (v.norm() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid_argument(format!(
                "not a unit vector: norm {}",
                v.norm()
            )));
        }
        Ok(UnitVec3(v))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Result<Self> {
        UnitVec3::new(Vec3::new(x, y, z))
    }

    pub fn as_vec(self) -> Vec3 {
        self.0
    }

    pub fn neg(self) -> UnitVec3 {
        UnitVec3(-self.0)
    }

    pub fn x(self) -> f64 {
        self.0.x
    }
    pub fn y(self) -> f64 {
        self.0.y
    }
    pub fn z(self) -> f64 {
        self.0.z
    }
}

impl TryFrom<Vec3> for UnitVec3 {
    type Error = Error;
    fn try_from(v: Vec3) -> Result<Self> {
        UnitVec3::new(v)
    }
}

impl From<UnitVec3> for Vec3 {
    fn from(u: UnitVec3) -> Vec3 {
        u.0
    }
}

// ---------------------------------------------------------------------------
// Rotations and poses
// ---------------------------------------------------------------------------

/// A proper rotation stored as three orthonormal column axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotMat {
    cols: [Vec3; 3],
}

impl RotMat {
    pub const IDENTITY: RotMat = RotMat {
        cols: [
            Vec3 { x: 1.0, y: 0.0, z: 0.0 },
            Vec3 { x: 0.0, y: 1.0, z: 0.0 },
            Vec3 { x: 0.0, y: 0.0, z: 1.0 },
        ],
    };

    /// Build from columns, enforcing orthonormality and det = +1.
    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Result<Self> {
        let m = RotMat { cols: [c0, c1, c2] };
        m.check()?;
        Ok(m)
    }

    /// Build without validation. Callers must guarantee the invariants.
    pub(crate) fn from_cols_unchecked(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        RotMat { cols: [c0, c1, c2] }
    }

    pub fn check(&self) -> Result<()> {
        if self.ortho_defect() > ORTHO_TOL {
            return Err(Error::invalid_argument(
                "rotation columns are not orthonormal",
            ));
        }
        if (self.det() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid_argument(format!(
                "rotation determinant {} != 1",
                self.det()
            )));
        }
        Ok(())
    }

    /// Max-norm of RᵀR − I.
    pub fn ortho_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.cols[i].dot(self.cols[j]) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    pub fn col(&self, i: usize) -> Vec3 {
        self.cols[i]
    }

    pub fn det(&self) -> f64 {
        self.cols[0].dot(self.cols[1].cross(self.cols[2]))
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        self.cols[0] * v.x + self.cols[1] * v.y + self.cols[2] * v.z
    }

    /// Rᵀ v (rotation by the inverse).
    pub fn tr_mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.cols[0].dot(v), self.cols[1].dot(v), self.cols[2].dot(v))
    }

    pub fn mul_mat(&self, o: &RotMat) -> RotMat {
        RotMat {
            cols: [
                self.mul_vec(o.cols[0]),
                self.mul_vec(o.cols[1]),
                self.mul_vec(o.cols[2]),
            ],
        }
    }

    pub fn transpose(&self) -> RotMat {
        let c = &self.cols;
        RotMat {
            cols: [
                Vec3::new(c[0].x, c[1].x, c[2].x),
                Vec3::new(c[0].y, c[1].y, c[2].y),
                Vec3::new(c[0].z, c[1].z, c[2].z),
            ],
        }
    }

    /// Rotation about the world z axis (counter-clockwise looking down −z).
    pub fn rot_z(angle: f64) -> RotMat {
        let (s, c) = angle.sin_cos();
        RotMat {
            cols: [
                Vec3::new(c, s, 0.0),
                Vec3::new(-s, c, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
        }
    }

    /// Rotation about the frame's own y axis used for the approach sweep.
    ///
    /// Sign convention is fixed by the pose-set contract: at +90° the
    /// approach column lands on the negated first column of the base frame.
    pub fn rot_y_sweep(angle: f64) -> RotMat {
        let (s, c) = angle.sin_cos();
        RotMat {
            cols: [
                Vec3::new(c, 0.0, s),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(-s, 0.0, c),
            ],
        }
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn expand(&self, margin: f64) -> Aabb {
        let m = Vec3::new(margin, margin, margin);
        Aabb { min: self.min - m, max: self.max + m }
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        (e.x.max(0.0)) * (e.y.max(0.0)) * (e.z.max(0.0))
    }
}

/// A rigid transform: rotation plus translation in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    pub rotation: RotMat,
    pub translation: Vec3,
}

impl GraspPose {
    pub fn new(rotation: RotMat, translation: Vec3) -> Self {
        GraspPose { rotation, translation }
    }

    pub fn identity() -> Self {
        GraspPose { rotation: RotMat::IDENTITY, translation: Vec3::ZERO }
    }

    /// Map a point from the local frame into the world frame.
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Map a world point into the local frame.
    pub fn inverse_transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.tr_mul_vec(p - self.translation)
    }
}

// ---------------------------------------------------------------------------
// Contact grasps
// ---------------------------------------------------------------------------

/// Contact-based grasp: contact point, closing normal, per-angle affordance
/// scores, and gripper width.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContactGrasp {
    pub contact: Vec3,
    pub normal: UnitVec3,
    pub scores: Vec<f64>,
    pub width: f64,
}

impl ContactGrasp {
    pub fn validate(&self, cfg: &GraspConfig) -> Result<()> {
        if !self.contact.is_finite() {
            return Err(Error::invalid_argument("non-finite contact point"));
        }
        if self.scores.len() != cfg.n_alpha {
            return Err(Error::invalid_argument(format!(
                "expected {} scores, got {}",
                cfg.n_alpha,
                self.scores.len()
            )));
        }
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid_argument("scores outside [0, 1]"));
        }
        if !(0.0..=cfg.w_max).contains(&self.width) {
            return Err(Error::invalid_argument(format!(
                "width {} outside [0, {}]",
                self.width, cfg.w_max
            )));
        }
        Ok(())
    }
}

fn default_n_alpha() -> usize {
    12
}
fn default_w_max() -> f64 {
    0.08
}
fn default_gravity() -> UnitVec3 {
    UnitVec3(Vec3::new(0.0, 0.0, -1.0))
}
fn default_singularity_threshold() -> f64 {
    0.98
}

/// Grasp discretization and gripper limits.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspConfig {
    /// Number of discretized approach angles.
    #[serde(default = "default_n_alpha")]
    pub n_alpha: usize,
    /// Maximal opening width of the gripper, meters.
    #[serde(default = "default_w_max")]
    pub w_max: f64,
    /// Gravity direction in the world frame (+z-up world).
    #[serde(default = "default_gravity")]
    pub gravity: UnitVec3,
    /// |gravity · normal| above which the frame switches to the singular
    /// construction.
    #[serde(default = "default_singularity_threshold")]
    pub singularity_threshold: f64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        GraspConfig {
            n_alpha: default_n_alpha(),
            w_max: default_w_max(),
            gravity: default_gravity(),
            singularity_threshold: default_singularity_threshold(),
        }
    }
}

impl GraspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_alpha < 2 {
            return Err(Error::invalid_argument("n_alpha must be >= 2"));
        }
        if !(self.w_max > 0.0) {
            return Err(Error::invalid_argument("w_max must be positive"));
        }
        if !(self.singularity_threshold > 0.0 && self.singularity_threshold < 1.0) {
            return Err(Error::invalid_argument(
                "singularity_threshold must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Evenly spaced approach angles on the half-open grid
/// α_i = −π/2 + i·π/n_alpha, i = 0..n_alpha−1, radians.
///
/// −90° and +90° describe the same grasp line up to a finger swap, so only
/// the lower endpoint is included.
pub fn approach_angles(cfg: &GraspConfig) -> Vec<f64> {
    let n = cfg.n_alpha;
    (0..n)
        .map(|i| -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / n as f64)
        .collect()
}

/// Base grasp frame for a contact normal `n` and gravity `z`.
///
/// Columns are (x, y, z) = (normalize(z×n), n, normalize((z×n)×n)): the jaws
/// close along the second column, the approach direction is the third. When
/// |z·n| exceeds the singularity threshold the first column is instead the
/// world x axis projected onto the plane perpendicular to `n`.
pub fn base_frame(n: UnitVec3, z: UnitVec3, cfg: &GraspConfig) -> Result<RotMat> {
    cfg.validate()?;
    let nv = n.as_vec();
    if (nv.norm() - 1.0).abs() > ORTHO_TOL {
        return Err(Error::invalid_argument("contact normal is not unit length"));
    }
    let zv = z.as_vec();
    let c0 = if zv.dot(nv).abs() <= cfg.singularity_threshold {
        zv.cross(nv).normalized()?.as_vec()
    } else {
        // Singular: pick the world x direction projected onto the plane ⟂ n.
        let x = Vec3::new(1.0, 0.0, 0.0);
        (x - nv * x.dot(nv)).normalized()?.as_vec()
    };
    // c0 ⟂ c1 and both unit, so c0 × c1 completes a right-handed frame.
    let c2 = c0.cross(nv);
    Ok(RotMat::from_cols_unchecked(c0, nv, c2))
}

/// Tool-center point for a contact grasp: t = c + ((w_max − w)/2)·n.
pub fn tcp_from_contact(c: Vec3, n: UnitVec3, w: f64, cfg: &GraspConfig) -> Result<Vec3> {
    if !(0.0..=cfg.w_max).contains(&w) {
        return Err(Error::invalid_argument(format!(
            "width {w} outside [0, {}]",
            cfg.w_max
        )));
    }
    Ok(c + n.as_vec() * ((cfg.w_max - w) / 2.0))
}

/// The n_alpha SE(3) poses of a contact grasp: shared tool-center point, base
/// frame rotated about its own y axis by each approach angle.
///
/// Every pose keeps its second column equal to the contact normal and its
/// third column (the approach direction) perpendicular to it.
pub fn pose_set(g: &ContactGrasp, cfg: &GraspConfig) -> Result<Vec<GraspPose>> {
    g.validate(cfg)?;
    let base = base_frame(g.normal, cfg.gravity, cfg)?;
    let t = tcp_from_contact(g.contact, g.normal, g.width, cfg)?;
    Ok(approach_angles(cfg)
        .into_iter()
        .map(|a| GraspPose::new(base.mul_mat(&RotMat::rot_y_sweep(a)), t))
        .collect())
}

/// Single pose for an explicit approach angle (not necessarily on the grid).
pub fn pose_at_angle(
    contact: Vec3,
    normal: UnitVec3,
    width: f64,
    angle: f64,
    cfg: &GraspConfig,
) -> Result<GraspPose> {
    let base = base_frame(normal, cfg.gravity, cfg)?;
    let t = tcp_from_contact(contact, normal, width, cfg)?;
    Ok(GraspPose::new(base.mul_mat(&RotMat::rot_y_sweep(angle)), t))
}

/// Best-scoring pose of a contact grasp, or `None` when every score is below
/// `threshold`. Ties prefer the smaller |α_i|, then the smaller index.
pub fn best_grasp_per_contact(
    g: &ContactGrasp,
    threshold: f64,
    cfg: &GraspConfig,
) -> Result<Option<(GraspPose, f64)>> {
    g.validate(cfg)?;
    let angles = approach_angles(cfg);
    let mut best: Option<usize> = None;
    for i in 0..g.scores.len() {
        let better = match best {
            None => true,
            Some(b) => {
                let (si, sb) = (g.scores[i], g.scores[b]);
                si > sb || (si == sb && angles[i].abs() < angles[b].abs())
            }
        };
        if better {
            best = Some(i);
        }
    }
    match best {
        Some(i) if g.scores[i] >= threshold => {
            let poses = pose_set(g, cfg)?;
            Ok(Some((poses[i], g.scores[i])))
        }
        _ => Ok(None),
    }
}
