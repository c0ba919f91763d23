//! Pointcloud processing: downsampling, denoising, normal estimation,
//! sampling, neighbor queries, positional encodings, and observation
//! augmentation.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RotMat, UnitVec3, Vec3};

mod grid;
pub mod ply;

pub use grid::KnnGrid;

/// Instance/semantic label given to tabletop points by the renderer.
pub const TABLE_ID: u32 = u32::MAX;

/// A pointcloud with optional normals and per-point instance/semantic labels.
///
/// Optional arrays, when present, have the same length as `points`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<UnitVec3>>,
    pub instance_ids: Option<Vec<u32>>,
    pub semantic_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        PointCloud { points, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid_argument("cloud contains non-finite points"));
        }
        for (name, len) in [
            ("normals", self.normals.as_ref().map(Vec::len)),
            ("instance_ids", self.instance_ids.as_ref().map(Vec::len)),
            ("semantic_ids", self.semantic_ids.as_ref().map(Vec::len)),
        ] {
            if let Some(l) = len {
                if l != self.points.len() {
                    return Err(Error::invalid_argument(format!(
                        "{name} length {l} != point count {}",
                        self.points.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keep exactly the points at `keep[i] == true`, in order.
    pub fn filter(&self, keep: &[bool]) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(p, _)| *p)
                .collect(),
            normals: self.normals.as_ref().map(|ns| {
                ns.iter().zip(keep).filter(|(_, k)| **k).map(|(n, _)| *n).collect()
            }),
            instance_ids: self.instance_ids.as_ref().map(|ids| {
                ids.iter().zip(keep).filter(|(_, k)| **k).map(|(i, _)| *i).collect()
            }),
            semantic_ids: self.semantic_ids.as_ref().map(|ids| {
                ids.iter().zip(keep).filter(|(_, k)| **k).map(|(i, _)| *i).collect()
            }),
        }
    }

    /// Subset of the cloud at the given indices.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|ns| idx.iter().map(|&i| ns[i]).collect()),
            instance_ids: self
                .instance_ids
                .as_ref()
                .map(|ids| idx.iter().map(|&i| ids[i]).collect()),
            semantic_ids: self
                .semantic_ids
                .as_ref()
                .map(|ids| idx.iter().map(|&i| ids[i]).collect()),
        }
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points {
            lo = lo.min_comp(*p);
            hi = hi.max_comp(*p);
        }
        Some((lo, hi))
    }
}

fn default_noise_sigma() -> f64 {
    0.002
}
fn default_erase_cell() -> f64 {
    0.02
}
fn default_erase_prob() -> f64 {
    0.2
}
fn default_elastic() -> bool {
    true
}

#[doc(hidden)]
pub fn default_noise_sigma_pub() -> f64 {
    default_noise_sigma()
}
#[doc(hidden)]
pub fn default_erase_cell_pub() -> f64 {
    default_erase_cell()
}
#[doc(hidden)]
pub fn default_erase_prob_pub() -> f64 {
    default_erase_prob()
}

/// Observation augmentation parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-coordinate Gaussian noise, meters.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Edge length of the erase cells, meters.
    #[serde(default = "default_erase_cell")]
    pub erase_cell: f64,
    /// Probability that an erase cell is dropped.
    #[serde(default = "default_erase_prob")]
    pub erase_prob: f64,
    /// Apply the smooth elastic deformation field.
    #[serde(default = "default_elastic")]
    pub elastic: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_sigma: default_noise_sigma(),
            erase_cell: default_erase_cell(),
            erase_prob: default_erase_prob(),
            elastic: default_elastic(),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid_argument("noise_sigma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.erase_prob) {
            return Err(Error::invalid_argument("erase_prob must lie in [0, 1]"));
        }
        if self.erase_cell <= 0.0 {
            return Err(Error::invalid_argument("erase_cell must be positive"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Downsampling
// ---------------------------------------------------------------------------

fn voxel_key(p: Vec3, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Majority vote over small integer labels; ties prefer the lowest id.
fn majority(ids: impl Iterator<Item = u32>) -> u32 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for id in ids {
        *counts.entry(id).or_insert(0) += 1;
    }
    let mut best = (0usize, u32::MAX);
    for (&id, &c) in &counts {
        if c > best.0 || (c == best.0 && id < best.1) {
            best = (c, id);
        }
    }
    best.1
}

/// One point per occupied voxel cell, at the centroid of the cell's members.
/// Labels are pooled by majority vote (ties to the lowest id), normals are
/// averaged and renormalized.
///
/// The output is ordered by cell index and member sums run in a sorted order,
/// so the result does not depend on the input point order.
pub fn voxel_downsample(pc: &PointCloud, cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0) {
        return Err(Error::invalid_argument("cell size must be positive"));
    }
    pc.validate()?;
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pc.points.iter().enumerate() {
        cells.entry(voxel_key(*p, cell)).or_default().push(i);
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();

    let mut out = PointCloud {
        points: Vec::with_capacity(keys.len()),
        normals: pc.normals.as_ref().map(|_| Vec::with_capacity(keys.len())),
        instance_ids: pc.instance_ids.as_ref().map(|_| Vec::with_capacity(keys.len())),
        semantic_ids: pc.semantic_ids.as_ref().map(|_| Vec::with_capacity(keys.len())),
    };
    for key in keys {
        let mut members = cells.remove(&key).unwrap();
        // Sort members by coordinates so the centroid sum is independent of
        // the original ordering.
        members.sort_unstable_by(|&a, &b| {
            let (pa, pb) = (pc.points[a], pc.points[b]);
            pa.to_array().partial_cmp(&pb.to_array()).unwrap().then(a.cmp(&b))
        });
        let mut sum = Vec3::ZERO;
        for &i in &members {
            sum = sum + pc.points[i];
        }
        out.points.push(sum * (1.0 / members.len() as f64));
        if let (Some(src), Some(dst)) = (&pc.normals, &mut out.normals) {
            let mut ns = Vec3::ZERO;
            for &i in &members {
                ns = ns + src[i].as_vec();
            }
            let n = ns
                .normalized()
                .unwrap_or_else(|_| src[members[0]].as_vec().normalized().unwrap());
            dst.push(n);
        }
        if let (Some(src), Some(dst)) = (&pc.instance_ids, &mut out.instance_ids) {
            dst.push(majority(members.iter().map(|&i| src[i])));
        }
        if let (Some(src), Some(dst)) = (&pc.semantic_ids, &mut out.semantic_ids) {
            dst.push(majority(members.iter().map(|&i| src[i])));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Denoising and normals
// ---------------------------------------------------------------------------

/// Remove points whose mean k-nearest-neighbor distance exceeds the global
/// mean plus `std_ratio` standard deviations of that statistic.
pub fn statistical_outlier_removal(pc: &PointCloud, k: usize, std_ratio: f64) -> Result<PointCloud> {
    if k < 1 {
        return Err(Error::invalid_argument("k must be >= 1"));
    }
    if !(std_ratio > 0.0) {
        return Err(Error::invalid_argument("std_ratio must be positive"));
    }
    if pc.len() <= k {
        return Err(Error::invalid_argument(format!(
            "need more than k={k} points, got {}",
            pc.len()
        )));
    }
    let grid = KnnGrid::build_auto(&pc.points);
    let mut stat = vec![0.0f64; pc.len()];
    for (i, p) in pc.points.iter().enumerate() {
        let nn = grid.knn(*p, k, Some(i));
        stat[i] = nn.iter().map(|(_, d)| d).sum::<f64>() / k as f64;
    }
    let mean = stat.iter().sum::<f64>() / stat.len() as f64;
    let var = stat.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / stat.len() as f64;
    let cutoff = mean + std_ratio * var.sqrt();
    let keep: Vec<bool> = stat.iter().map(|&s| s <= cutoff).collect();
    Ok(pc.filter(&keep))
}

/// Jacobi eigen-decomposition of a symmetric 3x3 matrix. Returns the
/// eigenvector of the smallest eigenvalue.
fn smallest_eigenvector(mut a: [[f64; 3]; 3]) -> Vec3 {
    let mut v = [[0.0f64; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..32 {
        let (mut p, mut q, mut big) = (0, 1, 0.0f64);
        for i in 0..3 {
            for j in (i + 1)..3 {
                if a[i][j].abs() > big {
                    big = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if big < 1e-15 {
            break;
        }
        let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for i in 0..3 {
            let (aip, aiq) = (a[i][p], a[i][q]);
            a[i][p] = c * aip - s * aiq;
            a[i][q] = s * aip + c * aiq;
        }
        for j in 0..3 {
            let (apj, aqj) = (a[p][j], a[q][j]);
            a[p][j] = c * apj - s * aqj;
            a[q][j] = s * apj + c * aqj;
        }
        for i in 0..3 {
            let (vip, viq) = (v[i][p], v[i][q]);
            v[i][p] = c * vip - s * viq;
            v[i][q] = s * vip + c * viq;
        }
    }
    let mut min_i = 0;
    for i in 1..3 {
        if a[i][i] < a[min_i][min_i] {
            min_i = i;
        }
    }
    Vec3::new(v[0][min_i], v[1][min_i], v[2][min_i])
}

/// Covariance-analysis normals over the k-nearest neighborhood (including the
/// point itself), sign-flipped to face `viewpoint`.
pub fn estimate_normals(pc: &PointCloud, k: usize, viewpoint: Vec3) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::invalid_argument("k must be >= 3"));
    }
    if pc.len() < k {
        return Err(Error::invalid_argument(format!(
            "need at least k={k} points, got {}",
            pc.len()
        )));
    }
    let grid = KnnGrid::build_auto(&pc.points);
    let mut normals = Vec::with_capacity(pc.len());
    for (i, p) in pc.points.iter().enumerate() {
        // Neighborhood of size k: the point itself plus its k−1 nearest.
        let nn = grid.knn(*p, k - 1, Some(i));
        let mut members: Vec<usize> = vec![i];
        members.extend(nn.iter().map(|(j, _)| *j));

        let mut mean = Vec3::ZERO;
        for &j in &members {
            mean = mean + pc.points[j];
        }
        mean = mean * (1.0 / members.len() as f64);
        let mut cov = [[0.0f64; 3]; 3];
        for &j in &members {
            let d = pc.points[j] - mean;
            let da = d.to_array();
            for r in 0..3 {
                for c in 0..3 {
                    cov[r][c] += da[r] * da[c];
                }
            }
        }
        let raw = smallest_eigenvector(cov);
        let mut n = raw
            .normalized()
            .map(|u| u.as_vec())
            .unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        if n.dot(viewpoint - *p) < 0.0 {
            n = -n;
        }
        normals.push(UnitVec3::new(n).expect("eigenvector is unit length"));
    }
    let mut out = pc.clone();
    out.normals = Some(normals);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sampling and queries
// ---------------------------------------------------------------------------

/// Greedy farthest-point sampling from an explicit start index. Each pick
/// maximizes the distance to the already-chosen set; ties take the lowest
/// index.
pub fn farthest_point_sampling_from(pc: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = pc.len();
    if m < 1 || m > n {
        return Err(Error::invalid_argument(format!("m={m} outside [1, {n}]")));
    }
    if start >= n {
        return Err(Error::invalid_argument("start index out of range"));
    }
    let mut picked = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    picked.push(current);
    min_d[current] = f64::NEG_INFINITY;
    for _ in 1..m {
        let cp = pc.points[current];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..n {
            let d = (pc.points[i] - cp).norm();
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best.0 {
                best = (min_d[i], i);
            }
        }
        current = best.1;
        min_d[current] = f64::NEG_INFINITY;
        picked.push(current);
    }
    Ok(picked)
}

/// Farthest-point sampling with a seeded random start index.
pub fn farthest_point_sampling(pc: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    if pc.is_empty() {
        return Err(Error::invalid_argument("empty cloud"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..pc.len());
    farthest_point_sampling_from(pc, m, start)
}

/// Exact k nearest neighbors of `query`, ascending by distance; distance ties
/// prefer the lower index.
pub fn knn(query: Vec3, pc: &PointCloud, k: usize) -> Result<Vec<(usize, f64)>> {
    if k > pc.len() {
        return Err(Error::invalid_argument(format!(
            "k={k} exceeds cloud size {}",
            pc.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let grid = KnnGrid::build_auto(&pc.points);
    Ok(grid.knn(query, k, None))
}

/// Fourier positional encoding of a 3D point: 6·num_freqs values.
///
/// Layout: first all sines, then all cosines; within each block the axis is
/// the major index and the frequency the minor one, i.e.
/// `[sin_x(f0..), sin_y(f0..), sin_z(f0..), cos_x(f0..), ...]` with
/// frequency f contributing `sin(2^f · scale · π · coord)`.
pub fn fourier_encode(x: Vec3, num_freqs: usize, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * num_freqs);
    let coords = x.to_array();
    for &c in &coords {
        for f in 0..num_freqs {
            out.push(((1u64 << f) as f64 * scale * std::f64::consts::PI * c).sin());
        }
    }
    for &c in &coords {
        for f in 0..num_freqs {
            out.push(((1u64 << f) as f64 * scale * std::f64::consts::PI * c).cos());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; consumes two uniforms.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The world-z rotation angle `augment` will draw for this config. Exposed so
/// label sets can be co-rotated with the cloud.
pub fn augment_rotation_angle(cfg: &AugmentConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.gen_range(0.0..std::f64::consts::TAU)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Smooth displacement field: i.i.d. Gaussian control vectors on a 4x4x4
/// lattice over `(lo, hi)`, trilinearly interpolated.
struct ElasticField {
    lo: Vec3,
    inv_ext: Vec3,
    ctrl: Vec<Vec3>, // 4*4*4, x fastest
}

impl ElasticField {
    const N: usize = 4;

    fn new(lo: Vec3, hi: Vec3, sigma: f64, clip: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = Self::N;
        let mut ctrl = Vec::with_capacity(n * n * n);
        for _ in 0..n * n * n {
            ctrl.push(Vec3::new(
                (gaussian(rng) * sigma).clamp(-clip, clip),
                (gaussian(rng) * sigma).clamp(-clip, clip),
                (gaussian(rng) * sigma).clamp(-clip, clip),
            ));
        }
        let ext = hi - lo;
        let inv = Vec3::new(
            1.0 / ext.x.max(1e-9),
            1.0 / ext.y.max(1e-9),
            1.0 / ext.z.max(1e-9),
        );
        ElasticField { lo, inv_ext: inv, ctrl }
    }

    fn displacement(&self, p: Vec3) -> Vec3 {
        let n = Self::N;
        let u = Vec3::new(
            ((p.x - self.lo.x) * self.inv_ext.x).clamp(0.0, 1.0) * (n - 1) as f64,
            ((p.y - self.lo.y) * self.inv_ext.y).clamp(0.0, 1.0) * (n - 1) as f64,
            ((p.z - self.lo.z) * self.inv_ext.z).clamp(0.0, 1.0) * (n - 1) as f64,
        );
        let i = [
            (u.x.floor() as usize).min(n - 2),
            (u.y.floor() as usize).min(n - 2),
            (u.z.floor() as usize).min(n - 2),
        ];
        let f = [u.x - i[0] as f64, u.y - i[1] as f64, u.z - i[2] as f64];
        let mut acc = Vec3::ZERO;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                        * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                        * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                    let c = self.ctrl[(i[0] + dx) + n * ((i[1] + dy) + n * (i[2] + dz))];
                    acc = acc + c * w;
                }
            }
        }
        acc
    }
}

/// Observation augmentation, fully determined by `cfg.seed`. Applies in
/// order: a random rotation about world z, per-coordinate Gaussian noise, a
/// smooth elastic deformation, and random erasure of `erase_cell` cubes.
pub fn augment(pc: &PointCloud, cfg: &AugmentConfig) -> Result<PointCloud> {
    cfg.validate()?;
    pc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let rot = RotMat::rot_z(angle);

    let mut out = pc.clone();
    for p in &mut out.points {
        *p = rot.mul_vec(*p);
    }
    if let Some(ns) = &mut out.normals {
        for n in ns.iter_mut() {
            *n = UnitVec3::new(rot.mul_vec(n.as_vec())).expect("rotation preserves norm");
        }
    }

    if cfg.noise_sigma > 0.0 {
        for p in &mut out.points {
            *p = *p
                + Vec3::new(
                    gaussian(&mut rng) * cfg.noise_sigma,
                    gaussian(&mut rng) * cfg.noise_sigma,
                    gaussian(&mut rng) * cfg.noise_sigma,
                );
        }
    }

    if cfg.elastic {
        if let Some((lo, hi)) = out.bounds() {
            let field = ElasticField::new(lo, hi, 0.005, 0.010, &mut rng);
            for p in &mut out.points {
                *p = *p + field.displacement(*p);
            }
        }
    }

    if cfg.erase_prob > 0.0 && !out.is_empty() {
        let (lo, _) = out.bounds().unwrap();
        let erase_seed = rng.gen::<u64>();
        let keep: Vec<bool> = out
            .points
            .iter()
            .map(|p| {
                let c = voxel_key(*p - lo, cfg.erase_cell);
                // Per-cell Bernoulli draw, independent of iteration order.
                let h = splitmix(
                    erase_seed
                        ^ splitmix(c.0 as u64)
                        ^ splitmix((c.1 as u64).rotate_left(21))
                        ^ splitmix((c.2 as u64).rotate_left(42)),
                );
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                u >= cfg.erase_prob
            })
            .collect();
        out = out.filter(&keep);
    }
    Ok(out)
}

/// Retain points strictly above the table height.
pub fn remove_table(pc: &PointCloud, z_thresh: f64) -> PointCloud {
    let keep: Vec<bool> = pc.points.iter().map(|p| p.z > z_thresh).collect();
    pc.filter(&keep)
}
