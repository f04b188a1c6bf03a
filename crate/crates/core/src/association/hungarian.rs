//! Kuhn-Munkres minimum-cost assignment.
//!
//! Dense O(n³) shortest-augmenting-path formulation with row/column
//! potentials. Rectangular inputs are padded to square with a constant that
//! exceeds every real cost; padded pairs never reach the output.

use nalgebra::DMatrix;

/// Minimum-cost assignment covering `min(rows, cols)` pairs, sorted by row.
///
/// Costs must be finite. An empty side yields an empty assignment.
pub fn kuhn_munkres(costs: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = costs.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    debug_assert!(costs.iter().all(|v| v.is_finite()));
    let n = rows.max(cols);
    let max_abs = costs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pad = 10.0 * (max_abs + 1.0);
    let cost = |i: usize, j: usize| {
        if i < rows && j < cols {
            costs[(i, j)]
        } else {
            pad
        }
    };

    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let i = col_owner[j];
            (i > 0 && i <= rows && j <= cols).then_some((i - 1, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Sum of the selected costs in row order.
pub fn assignment_cost(costs: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| costs[(i, j)]).sum()
}
