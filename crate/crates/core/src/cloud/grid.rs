//! Uniform hash-grid accelerator for exact nearest-neighbor queries.
//!
//! Results are identical to a brute-force scan: the search expands shells of
//! cells until the k-th best distance is closed off, and ties are broken by
//! the lower point index.

use std::collections::HashMap;

use crate::geom::Vec3;

pub struct KnnGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    cell_lo: (i64, i64, i64),
    cell_hi: (i64, i64, i64),
}

fn cell_of(p: Vec3, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

impl<'a> KnnGrid<'a> {
    pub fn build(points: &'a [Vec3], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(*p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            cells.entry(c).or_default().push(i as u32);
        }
        KnnGrid { points, cell, cells, cell_lo: lo, cell_hi: hi }
    }

    /// Pick a cell size that keeps shell searches short: a few points per
    /// occupied cell for volumetric clouds, and never more than ~64 cells
    /// along the longest extent so degenerate (planar, collinear) clouds do
    /// not blow up the ring enumeration.
    pub fn build_auto(points: &'a [Vec3]) -> Self {
        let n = points.len().max(1);
        let mut lo = points.first().copied().unwrap_or(Vec3::ZERO);
        let mut hi = lo;
        for p in points {
            lo = lo.min_comp(*p);
            hi = hi.max_comp(*p);
        }
        let ext = hi - lo;
        let longest = ext.x.max(ext.y).max(ext.z).max(1e-6);
        let vol = (ext.x.max(1e-6)) * (ext.y.max(1e-6)) * (ext.z.max(1e-6));
        let by_density = (vol / n as f64).cbrt();
        let cell = by_density.max(longest / 64.0).clamp(1e-4, 1.0) * 1.8;
        Self::build(points, cell)
    }

    /// Exact k nearest neighbors of `query`, ascending by distance, ties by
    /// lower index. `skip` removes one index from consideration (the query
    /// point itself, when it belongs to the cloud).
    pub fn knn(&self, query: Vec3, k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        let center = cell_of(query, self.cell);

        let consider = |idx: u32, best: &mut Vec<(f64, u32)>| {
            if Some(idx as usize) == skip {
                return;
            }
            let d = (self.points[idx as usize] - query).norm();
            let key = (d, idx);
            let pos = best.partition_point(|&(bd, bi)| (bd, bi) < key);
            if pos < k {
                best.insert(pos, key);
                if best.len() > k {
                    best.pop();
                }
            }
        };

        let mut ring = 0i64;
        loop {
            // Past a modest radius the shell enumeration costs more than a
            // linear scan; fall back to brute force for correctness.
            if ring > 16 {
                let mut all: Vec<(f64, u32)> = (0..self.points.len() as u32)
                    .filter(|&i| Some(i as usize) != skip)
                    .map(|i| ((self.points[i as usize] - query).norm(), i))
                    .collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                all.truncate(k);
                return all.into_iter().map(|(d, i)| (i as usize, d)).collect();
            }
            // Shell of cells at Chebyshev radius `ring` around the center.
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let key = (center.0 + dx, center.1 + dy, center.2 + dz);
                        if let Some(ids) = self.cells.get(&key) {
                            for &i in ids {
                                consider(i, &mut best);
                            }
                        }
                    }
                }
            }
            // The next shell cannot contain anything nearer than this bound.
            // Strict comparison: an unexplored point at exactly this distance
            // could still win a tie through its lower index.
            let closed = ring as f64 * self.cell;
            let done = best.len() == k && best[k - 1].0 < closed;
            // Stop once the ring covers every occupied cell.
            let span = [
                (center.0 - self.cell_lo.0).abs().max((self.cell_hi.0 - center.0).abs()),
                (center.1 - self.cell_lo.1).abs().max((self.cell_hi.1 - center.1).abs()),
                (center.2 - self.cell_lo.2).abs().max((self.cell_hi.2 - center.2).abs()),
            ];
            let exhausted = self.points.is_empty() || ring >= span[0].max(span[1]).max(span[2]);
            if done || exhausted {
                break;
            }
            ring += 1;
        }
        best.into_iter().map(|(d, i)| (i as usize, d)).collect()
    }
}
