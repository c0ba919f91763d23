//! Iso-surface extraction with adaptive sampling.
//!
//! The field is first sampled on the coarse `resolution` lattice. Cells whose
//! corner signs are mixed (and their one-cell neighborhood) form the active
//! region; only there is the field re-sampled at twice the resolution, and
//! the final triangulation runs on that refined lattice. Away from the
//! surface nothing is evaluated or triangulated, which is what makes the pass
//! adaptive while keeping the mesh crack-free: every emitted cell reads real
//! field values on a single uniform fine lattice.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

use super::mc_tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};
use super::TriangleMesh;

/// Values exactly at the iso level are nudged by this much so every cube
/// configuration is generic (no zero-area triangles, no vertex/corner
/// coincidences). The nudge is applied per lattice value, so neighboring
/// cells stay consistent and the mesh stays watertight.
const ISO_NUDGE: f64 = 1e-12;

fn nudge(v: f64, iso: f64) -> f64 {
    if (v - iso).abs() < ISO_NUDGE {
        iso + ISO_NUDGE
    } else {
        v
    }
}

/// Marching-cubes triangulation of the iso-surface of `field` over `bounds`.
///
/// `resolution` is the coarse cell count per axis; one refinement pass on
/// sign-crossing cells doubles it locally before triangulation. Vertices on
/// shared cell edges are welded, so closed surfaces come out watertight.
pub fn marching_cubes<F>(field: F, bounds: Aabb, resolution: usize, iso: f64) -> Result<TriangleMesh>
where
    F: Fn(Vec3) -> f64 + Sync,
{
    if resolution < 2 {
        return Err(Error::invalid_argument("resolution must be >= 2"));
    }
    let n = resolution;
    let ext = bounds.extent();
    if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
        return Err(Error::invalid_argument("bounds must have positive extent"));
    }

    let coarse_pt = |i: usize, j: usize, k: usize| -> Vec3 {
        Vec3::new(
            bounds.min.x + ext.x * i as f64 / n as f64,
            bounds.min.y + ext.y * j as f64 / n as f64,
            bounds.min.z + ext.z * k as f64 / n as f64,
        )
    };

    // Coarse lattice values, z-major slabs in parallel, deterministic layout.
    let np = n + 1;
    let coarse: Vec<f64> = (0..np)
        .into_par_iter()
        .flat_map_iter(|k| {
            let field = &field;
            (0..np).flat_map(move |j| {
                (0..np).map(move |i| nudge(field(coarse_pt(i, j, k)), iso))
            })
        })
        .collect();
    let cidx = |i: usize, j: usize, k: usize| -> usize { i + np * (j + np * k) };

    // Sign-crossing coarse cells.
    let mut crossing = vec![false; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let base_below = coarse[cidx(i, j, k)] < iso;
                let mut mixed = false;
                for off in &CORNER_OFFSETS[1..] {
                    if (coarse[cidx(i + off[0], j + off[1], k + off[2])] < iso) != base_below {
                        mixed = true;
                        break;
                    }
                }
                crossing[i + n * (j + n * k)] = mixed;
            }
        }
    }

    // Active region: crossing cells dilated by one cell in all directions.
    let mut active = vec![false; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if !crossing[i + n * (j + n * k)] {
                    continue;
                }
                for dk in k.saturating_sub(1)..(k + 2).min(n) {
                    for dj in j.saturating_sub(1)..(j + 2).min(n) {
                        for di in i.saturating_sub(1)..(i + 2).min(n) {
                            active[di + n * (dj + n * dk)] = true;
                        }
                    }
                }
            }
        }
    }

    // Fine lattice (2n + 1 per axis), filled lazily over the active region.
    let fn_ = 2 * n;
    let fnp = fn_ + 1;
    let fidx = |i: usize, j: usize, k: usize| -> usize { i + fnp * (j + fnp * k) };
    let fine_pt = |i: usize, j: usize, k: usize| -> Vec3 {
        Vec3::new(
            bounds.min.x + ext.x * i as f64 / fn_ as f64,
            bounds.min.y + ext.y * j as f64 / fn_ as f64,
            bounds.min.z + ext.z * k as f64 / fn_ as f64,
        )
    };

    let mut fine = vec![f64::NAN; fnp * fnp * fnp];
    let mut pending: Vec<(usize, usize, usize)> = Vec::new();
    let mut active_cells: Vec<(usize, usize, usize)> = Vec::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if !active[i + n * (j + n * k)] {
                    continue;
                }
                active_cells.push((i, j, k));
                for dk in 0..=2 {
                    for dj in 0..=2 {
                        for di in 0..=2 {
                            let (fi, fj, fk) = (2 * i + di, 2 * j + dj, 2 * k + dk);
                            let at = fidx(fi, fj, fk);
                            if !fine[at].is_nan() {
                                continue;
                            }
                            if fi % 2 == 0 && fj % 2 == 0 && fk % 2 == 0 {
                                fine[at] = coarse[cidx(fi / 2, fj / 2, fk / 2)];
                            } else {
                                fine[at] = f64::INFINITY; // mark pending
                                pending.push((fi, fj, fk));
                            }
                        }
                    }
                }
            }
        }
    }
    let evals: Vec<f64> = pending
        .par_iter()
        .map(|&(i, j, k)| nudge(field(fine_pt(i, j, k)), iso))
        .collect();
    for (&(i, j, k), v) in pending.iter().zip(evals) {
        fine[fidx(i, j, k)] = v;
    }

    // Triangulate the 8 fine cells of each active coarse cell, welding
    // vertices through global fine-edge keys.
    let mut mesh = TriangleMesh::default();
    let mut edge_vertices: HashMap<(usize, usize, usize, u8), u32> = HashMap::new();
    let mut seen_fine = vec![false; fnp * fnp * fnp]; // dedup fine cells by min corner

    for &(ci, cj, ck) in &active_cells {
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    let (i, j, k) = (2 * ci + di, 2 * cj + dj, 2 * ck + dk);
                    let at = fidx(i, j, k);
                    if seen_fine[at] {
                        continue;
                    }
                    seen_fine[at] = true;

                    let mut vals = [0.0f64; 8];
                    for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                        vals[c] = fine[fidx(i + off[0], j + off[1], k + off[2])];
                        debug_assert!(!vals[c].is_nan() && vals[c].is_finite());
                    }
                    let mut cube = 0usize;
                    for (c, v) in vals.iter().enumerate() {
                        if *v < iso {
                            cube |= 1 << c;
                        }
                    }
                    if EDGE_TABLE[cube] == 0 {
                        continue;
                    }

                    let mut edge_idx = [u32::MAX; 12];
                    for (e, corners) in EDGE_CORNERS.iter().enumerate() {
                        if EDGE_TABLE[cube] & (1 << e) == 0 {
                            continue;
                        }
                        let o0 = CORNER_OFFSETS[corners[0]];
                        let o1 = CORNER_OFFSETS[corners[1]];
                        let p0 = (i + o0[0], j + o0[1], k + o0[2]);
                        let p1 = (i + o1[0], j + o1[1], k + o1[2]);
                        // Canonical edge key: lower endpoint plus axis.
                        let (lo, axis) = if p0 <= p1 {
                            (p0, edge_axis(o0, o1))
                        } else {
                            (p1, edge_axis(o0, o1))
                        };
                        let key = (lo.0, lo.1, lo.2, axis);
                        let next_id = mesh.vertices.len() as u32;
                        let id = *edge_vertices.entry(key).or_insert_with(|| {
                            let (v0, v1) =
                                (vals[corners[0]], vals[corners[1]]);
                            let t = ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0);
                            let a = fine_pt(p0.0, p0.1, p0.2);
                            let b = fine_pt(p1.0, p1.1, p1.2);
                            mesh.vertices.push(a + (b - a) * t);
                            next_id
                        });
                        edge_idx[e] = id;
                    }

                    let tri = &TRI_TABLE[cube];
                    let mut t = 0;
                    while tri[t] >= 0 {
                        let a = edge_idx[tri[t] as usize];
                        let b = edge_idx[tri[t + 1] as usize];
                        let c = edge_idx[tri[t + 2] as usize];
                        if a != b && b != c && a != c {
                            mesh.triangles.push([a, b, c]);
                        }
                        t += 3;
                    }
                }
            }
        }
    }
    Ok(mesh)
}

fn edge_axis(o0: [usize; 3], o1: [usize; 3]) -> u8 {
    if o0[0] != o1[0] {
        0
    } else if o0[1] != o1[1] {
        1
    } else {
        2
    }
}
