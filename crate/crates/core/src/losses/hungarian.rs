//! Exact minimum-cost bipartite assignment (potentials + shortest augmenting
//! paths), plus a refinement pass that makes the returned assignment the
//! lexicographically smallest among all optima.

use crate::error::{Error, Result};

/// Rectangular cost matrix: rows are predicted queries, columns are
/// ground-truth instances.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid_argument("cost matrix shape mismatch"));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid_argument("cost matrix entries must be finite"));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Pairs (row, column), sorted by row; injective in both coordinates, with
/// exactly min(rows, cols) pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    /// Canonical total: pair costs summed in ascending row order.
    pub fn total(&self, cost: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| cost.at(r, c)).sum()
    }

    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|(r, _)| *r == row).map(|(_, c)| *c)
    }
}

/// Minimum total cost of assigning min(|rows|, |cols|) pairs within the given
/// row/column subsets. Shortest-augmenting-path with potentials; the smaller
/// side is treated as the row side.
fn min_total_subset(cost: &CostMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let transpose = rows.len() > cols.len();
    let (side_n, side_m): (&[usize], &[usize]) =
        if transpose { (cols, rows) } else { (rows, cols) };
    let n = side_n.len();
    let m = side_m.len();
    let at = |i: usize, j: usize| -> f64 {
        if transpose {
            cost.at(side_m[j], side_n[i])
        } else {
            cost.at(side_n[i], side_m[j])
        }
    };

    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1]; // row assigned to column j (0 = none)
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    // Exact pair-sum, independent of the potentials' rounding.
    let mut total = 0.0;
    for j in 1..=m {
        if p[j] != 0 {
            total += at(p[j] - 1, j - 1);
        }
    }
    total
}

/// Exact minimum-cost assignment with deterministic tie resolution: among all
/// optimal assignments, returns the lexicographically smallest pair list
/// (rows ascending; for each row, matching a smaller column — or any column
/// over staying unmatched — is preferred when optimality allows it).
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let all_rows: Vec<usize> = (0..cost.rows).collect();
    let all_cols: Vec<usize> = (0..cost.cols).collect();
    let optimum = min_total_subset(cost, &all_rows, &all_cols);
    let tol = 1e-11 * (1.0 + optimum.abs());

    let n_pairs = cost.rows.min(cost.cols);
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n_pairs);
    let mut used_col = vec![false; cost.cols];
    let mut forced_sum = 0.0;

    for row in 0..cost.rows {
        if pairs.len() == n_pairs {
            break;
        }
        let rest_rows: Vec<usize> = (row + 1..cost.rows).collect();
        let mut chosen: Option<usize> = None;
        for col in 0..cost.cols {
            if used_col[col] {
                continue;
            }
            let rest_cols: Vec<usize> = (0..cost.cols)
                .filter(|&c| !used_col[c] && c != col)
                .collect();
            let completion = min_total_subset(cost, &rest_rows, &rest_cols);
            let total = forced_sum + cost.at(row, col) + completion;
            if (total - optimum).abs() <= tol {
                chosen = Some(col);
                break;
            }
        }
        match chosen {
            Some(col) => {
                used_col[col] = true;
                forced_sum += cost.at(row, col);
                pairs.push((row, col));
            }
            None => {
                // Leaving this row unmatched must itself be optimal, and
                // feasible: enough rows must remain for the open columns.
                debug_assert!(cost.rows > cost.cols);
                debug_assert!(cost.rows - row - 1 >= n_pairs - pairs.len());
            }
        }
    }
    Assignment { pairs }
}
