//! Reconstruction metrics: symmetric chamfer distance between meshes and
//! Monte-Carlo volumetric IoU between occupancy functions, plus the
//! point-in-mesh test used to validate meshed surfaces against fields.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

use super::TriangleMesh;

// ---------------------------------------------------------------------------
// Point-to-triangle distance and a small BVH for nearest-surface queries
// ---------------------------------------------------------------------------

/// Closest point on triangle (a, b, c) to p.
fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    // Leaf: range into `order`; inner: child indices.
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

/// Median-split BVH over triangles for nearest-surface queries.
pub struct MeshBvh<'a> {
    mesh: &'a TriangleMesh,
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

impl<'a> MeshBvh<'a> {
    pub fn build(mesh: &'a TriangleMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::invalid_argument("cannot build BVH over empty mesh"));
        }
        let mut order: Vec<u32> = (0..mesh.triangles.len() as u32).collect();
        let centroids: Vec<Vec3> = mesh
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                (a + b + c) * (1.0 / 3.0)
            })
            .collect();
        let mut nodes = Vec::new();
        build_node(mesh, &centroids, &mut order, 0, mesh.triangles.len(), &mut nodes);
        Ok(MeshBvh { mesh, nodes, order })
    }

    /// Distance from `p` to the mesh surface.
    pub fn distance(&self, p: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_dist_sq(p, node.lo, node.hi) >= best * best {
                continue;
            }
            if node.count > 0 {
                for oi in node.start..node.start + node.count {
                    let t = self.mesh.triangles[self.order[oi as usize] as usize];
                    let [a, b, c] = t.map(|i| self.mesh.vertices[i as usize]);
                    let q = closest_point_on_triangle(p, a, b, c);
                    best = best.min((p - q).norm());
                }
            } else {
                // Visit the nearer child first.
                let l = node.left as usize;
                let r = node.right as usize;
                let dl = box_dist_sq(p, self.nodes[l].lo, self.nodes[l].hi);
                let dr = box_dist_sq(p, self.nodes[r].lo, self.nodes[r].hi);
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

fn box_dist_sq(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let dx = (lo.x - p.x).max(0.0).max(p.x - hi.x);
    let dy = (lo.y - p.y).max(0.0).max(p.y - hi.y);
    let dz = (lo.z - p.z).max(0.0).max(p.z - hi.z);
    dx * dx + dy * dy + dz * dz
}

fn build_node(
    mesh: &TriangleMesh,
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for &ti in &order[start..start + count] {
        for &vi in &mesh.triangles[ti as usize] {
            let v = mesh.vertices[vi as usize];
            lo = lo.min_comp(v);
            hi = hi.max_comp(v);
        }
    }
    let idx = nodes.len();
    nodes.push(BvhNode { lo, hi, left: 0, right: 0, start: start as u32, count: count as u32 });
    if count <= 8 {
        return idx;
    }
    // Split at the median along the widest axis.
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let key = |t: u32| -> f64 {
        let c = centroids[t as usize];
        [c.x, c.y, c.z][axis]
    };
    order[start..start + count]
        .sort_unstable_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap().then(a.cmp(&b)));
    let half = count / 2;
    let left = build_node(mesh, centroids, order, start, half, nodes);
    let right = build_node(mesh, centroids, order, start + half, count - half, nodes);
    nodes[idx].left = left as u32;
    nodes[idx].right = right as u32;
    nodes[idx].count = 0;
    idx
}

// ---------------------------------------------------------------------------
// Surface sampling
// ---------------------------------------------------------------------------

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::invalid_argument("cannot sample an empty mesh"));
    }
    let mut cum = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += mesh.triangle_area(*t);
        cum.push(total);
    }
    if total <= 0.0 {
        return Err(Error::invalid_argument("mesh has zero surface area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.gen_range(0.0..total);
        let ti = cum.partition_point(|&c| c <= pick).min(mesh.triangles.len() - 1);
        let [a, b, c] = mesh.triangles[ti].map(|i| mesh.vertices[i as usize]);
        // Uniform barycentric coordinates via the square-root trick.
        let r1: f64 = rng.gen_range(0.0..1.0);
        let r2: f64 = rng.gen_range(0.0..1.0);
        let s = r1.sqrt();
        out.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Chamfer distance
// ---------------------------------------------------------------------------

/// Symmetric chamfer distance: mean point-to-surface distance from
/// `n_samples` area-weighted samples on each mesh to the other mesh, with
/// accuracy and completeness averaged.
pub fn chamfer_l1(a: &TriangleMesh, b: &TriangleMesh, n_samples: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid_argument("chamfer distance needs nonempty meshes"));
    }
    let bvh_a = MeshBvh::build(a)?;
    let bvh_b = MeshBvh::build(b)?;
    let samples_a = sample_surface(a, n_samples, seed)?;
    let samples_b = sample_surface(b, n_samples, seed.wrapping_add(1))?;
    let acc: f64 = samples_a.iter().map(|p| bvh_b.distance(*p)).sum::<f64>() / n_samples as f64;
    let comp: f64 = samples_b.iter().map(|p| bvh_a.distance(*p)).sum::<f64>() / n_samples as f64;
    Ok(0.5 * (acc + comp))
}

// ---------------------------------------------------------------------------
// Volumetric IoU
// ---------------------------------------------------------------------------

/// Monte-Carlo volumetric IoU of two occupancy functions at threshold 0.5
/// over uniform samples in `bounds`. Returns 1.0 when both are empty.
pub fn volumetric_iou<Fa, Fb>(
    fa: Fa,
    fb: Fb,
    bounds: Aabb,
    n_samples: usize,
    seed: u64,
) -> Result<f64>
where
    Fa: Fn(Vec3) -> f64 + Sync,
    Fb: Fn(Vec3) -> f64 + Sync,
{
    if n_samples < 1 {
        return Err(Error::invalid_argument("n_samples must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = bounds.extent();
    let mut inter = 0usize;
    let mut union = 0usize;
    for _ in 0..n_samples {
        let p = Vec3::new(
            bounds.min.x + rng.gen_range(0.0..1.0) * ext.x,
            bounds.min.y + rng.gen_range(0.0..1.0) * ext.y,
            bounds.min.z + rng.gen_range(0.0..1.0) * ext.z,
        );
        let ia = fa(p) > 0.5;
        let ib = fb(p) > 0.5;
        if ia && ib {
            inter += 1;
        }
        if ia || ib {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

// ---------------------------------------------------------------------------
// Point-in-mesh test (ray parity)
// ---------------------------------------------------------------------------

/// Watertight-mesh containment by +x ray parity, with triangles bucketed on a
/// (y, z) grid. Queries landing exactly on edges are perturbed deterministically.
pub struct MeshContainment<'a> {
    mesh: &'a TriangleMesh,
    lo: Vec3,
    inv_cell: f64,
    ny: usize,
    nz: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> MeshContainment<'a> {
    pub fn build(mesh: &'a TriangleMesh) -> Result<Self> {
        let bounds = mesh
            .bounds()
            .ok_or_else(|| Error::invalid_argument("empty mesh"))?;
        let ext = bounds.extent();
        let n = (mesh.triangles.len() as f64).sqrt().ceil() as usize;
        let ny = n.clamp(1, 256);
        let nz = n.clamp(1, 256);
        let cell = (ext.y.max(ext.z) / ny as f64).max(1e-9);
        let inv_cell = 1.0 / cell;
        let mut buckets = vec![Vec::new(); ny * nz];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            let (ylo, yhi) = (a.y.min(b.y).min(c.y), a.y.max(b.y).max(c.y));
            let (zlo, zhi) = (a.z.min(b.z).min(c.z), a.z.max(b.z).max(c.z));
            let by0 = (((ylo - bounds.min.y) * inv_cell).floor() as isize).clamp(0, ny as isize - 1);
            let by1 = (((yhi - bounds.min.y) * inv_cell).floor() as isize).clamp(0, ny as isize - 1);
            let bz0 = (((zlo - bounds.min.z) * inv_cell).floor() as isize).clamp(0, nz as isize - 1);
            let bz1 = (((zhi - bounds.min.z) * inv_cell).floor() as isize).clamp(0, nz as isize - 1);
            for by in by0..=by1 {
                for bz in bz0..=bz1 {
                    buckets[by as usize + ny * bz as usize].push(ti as u32);
                }
            }
        }
        Ok(MeshContainment { mesh, lo: bounds.min, inv_cell, ny, nz, buckets })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        // Retry with tiny deterministic offsets when the ray grazes an edge.
        let mut q = p;
        for attempt in 0..4 {
            match self.parity(q) {
                Some(c) => return c,
                None => {
                    let eps = 1e-9 * (attempt + 1) as f64;
                    q = p + Vec3::new(0.0, eps, eps * 1.37);
                }
            }
        }
        false
    }

    /// Count crossings of the ray from p along +x; `None` signals a grazing
    /// hit that needs a retry.
    fn parity(&self, p: Vec3) -> Option<bool> {
        let by = ((p.y - self.lo.y) * self.inv_cell).floor() as isize;
        let bz = ((p.z - self.lo.z) * self.inv_cell).floor() as isize;
        if by < 0 || bz < 0 || by >= self.ny as isize || bz >= self.nz as isize {
            return Some(false);
        }
        let mut crossings = 0usize;
        for &ti in &self.buckets[by as usize + self.ny * bz as usize] {
            let [a, b, c] = self.mesh.triangles[ti as usize].map(|i| self.mesh.vertices[i as usize]);
            match ray_x_hits_triangle(p, a, b, c) {
                HitKind::Hit => crossings += 1,
                HitKind::Miss => {}
                HitKind::Grazing => return None,
            }
        }
        Some(crossings % 2 == 1)
    }
}

enum HitKind {
    Hit,
    Miss,
    Grazing,
}

/// Intersection of the +x ray from `p` with a triangle, projected onto the
/// (y, z) plane.
fn ray_x_hits_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> HitKind {
    // 2D orientation tests in the (y, z) plane.
    let sign = |u: Vec3, v: Vec3| -> f64 { (u.y - p.y) * (v.z - p.z) - (u.z - p.z) * (v.y - p.y) };
    let d0 = sign(a, b);
    let d1 = sign(b, c);
    let d2 = sign(c, a);
    let eps = 1e-15;
    if d0.abs() < eps || d1.abs() < eps || d2.abs() < eps {
        return HitKind::Grazing;
    }
    let inside = (d0 > 0.0 && d1 > 0.0 && d2 > 0.0) || (d0 < 0.0 && d1 < 0.0 && d2 < 0.0);
    if !inside {
        return HitKind::Miss;
    }
    // Barycentric interpolation of the crossing's x coordinate.
    let total = d0 + d1 + d2;
    let wx = (d1 * a.x + d2 * b.x + d0 * c.x) / total;
    if (wx - p.x).abs() < 1e-12 {
        return HitKind::Grazing;
    }
    if wx > p.x {
        HitKind::Hit
    } else {
        HitKind::Miss
    }
}
