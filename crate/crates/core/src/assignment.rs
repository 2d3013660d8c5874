//! Minimum-cost bipartite assignment (Hungarian method).
//!
//! The solver runs the O(n³) shortest-augmenting-path form of the Hungarian
//! algorithm on the cost matrix padded to square with zero-cost dummy rows.
//! Among all optimal assignments it returns the lexicographically smallest
//! one (row 0's column first, then row 1's, ...): every optimal assignment
//! uses only edges with zero reduced cost under the final dual potentials, so
//! the tie-break walks that tight subgraph with alternating paths instead of
//! re-solving.

use crate::error::{Error, Result};

/// Result of `min_cost_assignment`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Column chosen for each row.
    pub row_to_col: Vec<usize>,
    /// `Σ_i cost[i][row_to_col[i]]`, summed in row order.
    pub total_cost: f64,
}

/// Assigns each row of a `rows × cols` matrix (`rows <= cols`) to a distinct
/// column at minimum total cost.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            total_cost: 0.0,
        });
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    if rows > cols {
        return Err(Error::Shape(format!(
            "{rows} rows cannot be assigned injectively to {cols} columns"
        )));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }

    let n = cols;
    let at = |i: usize, j: usize| if i < rows { cost[i][j] } else { 0.0 };
    let (mut row_to_col, u, v) = solve_square(n, at);

    let scale = cost.iter().flatten().fold(1.0f64, |m, c| m.max(c.abs()));
    let eps = 1e-12 * scale * n as f64;
    let tight = |i: usize, j: usize| at(i, j) - u[i] - v[j] <= eps;
    lexicographic_refine(n, rows, &mut row_to_col, tight);

    row_to_col.truncate(rows);
    let total_cost = row_to_col.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(Assignment { row_to_col, total_cost })
}

/// Square Hungarian solve. Returns the row→column matching and the dual
/// potentials `(u, v)` with `cost(i, j) - u[i] - v[j] >= 0`, equality on the
/// matching.
fn solve_square(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based internal indexing; column 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites an optimal perfect matching into the lexicographically smallest
/// perfect matching of the tight subgraph, fixing rows `0..rows` in order.
fn lexicographic_refine(n: usize, rows: usize, row_to_col: &mut [usize], tight: impl Fn(usize, usize) -> bool) {
    let mut col_owner = vec![0; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_owner[j] = i;
    }

    for i in 0..rows {
        for j in 0..n {
            if j == row_to_col[i] {
                break;
            }
            if !tight(i, j) {
                continue;
            }
            // Move row i onto column j; the displaced row must reach i's old
            // column through tight edges without touching rows 0..=i.
            let freed = row_to_col[i];
            let displaced = col_owner[j];
            if displaced < i {
                continue;
            }
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut path = Vec::new();
            if find_path(displaced, freed, i, &tight, &col_owner, &mut visited, &mut path) {
                // path holds (row, new column) pairs; apply back to front.
                for &(r, c) in path.iter().rev() {
                    row_to_col[r] = c;
                    col_owner[c] = r;
                }
                row_to_col[i] = j;
                col_owner[j] = i;
                break;
            }
        }
    }
}

fn find_path(
    row: usize,
    target: usize,
    fixed_through: usize,
    tight: &impl Fn(usize, usize) -> bool,
    col_owner: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..visited.len() {
        if visited[c] || !tight(row, c) {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = col_owner[c];
        if next > fixed_through && find_path(next, target, fixed_through, tight, col_owner, visited, path) {
            path.push((row, c));
            return true;
        }
    }
    false
}
