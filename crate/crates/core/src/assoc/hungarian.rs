use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

/// Result of a one-to-one assignment between two index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
    /// Sum of the costs of the kept matches.
    pub total_cost: f64,
}

struct Solution {
    /// Column of every row of the square problem.
    col_of_row: Vec<usize>,
    total: f64,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Kuhn-Munkres with potentials on a square matrix, O(n³).
fn solve_square(c: &[Vec<f64>]) -> Solution {
    let n = c.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| c[i][col_of_row[i]]).sum();
    Solution {
        col_of_row,
        total,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

/// Minimum-cost one-to-one assignment of a rectangular cost matrix.
///
/// `min(m, n)` pairs are matched. Among several optimal assignments the
/// lexicographically smallest match list is returned. Matches costing more
/// than `max_cost` are demoted to unmatched after solving.
pub fn hungarian_assign(cost: &DMatrix<f64>, max_cost: Option<f64>) -> Assignment {
    let (m, n) = cost.shape();
    let size = m.max(n);
    let mut square = vec![vec![0.0; size]; size];
    for i in 0..m {
        for j in 0..n {
            square[i][j] = cost[(i, j)];
        }
    }
    let mut assignment = Assignment {
        matches: Vec::new(),
        unmatched_a: Vec::new(),
        unmatched_b: Vec::new(),
        total_cost: 0.0,
    };
    if size == 0 {
        return assignment;
    }

    let best = solve_square(&square);
    let scale = square.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * (1.0 + scale * size as f64);
    let big = 4.0 * (scale + 1.0) * size as f64;
    let mut current = best.col_of_row.clone();

    // Greedy lexicographic refinement. Edges with positive reduced cost
    // under the optimal potentials are in no optimal assignment, so only
    // tight edges need a constrained re-solve.
    let mut fixed: Vec<(usize, usize)> = Vec::new();
    for i in 0..m {
        let dummy_cols = n..size;
        let candidates = (0..n).chain(dummy_cols.clone().take(1));
        for j in candidates {
            let holds = if j >= n { current[i] >= n } else { current[i] == j };
            if holds {
                break;
            }
            if square[i][j] - best.u[i] - best.v[j] > tol {
                continue;
            }
            let mut constrained = square.clone();
            for &(fi, fj) in fixed.iter().chain(core::iter::once(&(i, j))) {
                let allowed = |c: usize| if fj >= n { c >= n } else { c == fj };
                for c in 0..size {
                    if !allowed(c) {
                        constrained[fi][c] = big;
                    }
                }
                if fj < n {
                    for (r, row) in constrained.iter_mut().enumerate() {
                        if r != fi {
                            row[fj] = big;
                        }
                    }
                }
            }
            let sol = solve_square(&constrained);
            if sol.total <= best.total + tol {
                current = sol.col_of_row;
                break;
            }
        }
        fixed.push((i, current[i]));
    }

    let mut col_used = vec![false; n];
    for (i, &j) in current.iter().enumerate().take(m) {
        let keep = j < n && max_cost.is_none_or(|mc| cost[(i, j)] <= mc);
        if keep {
            assignment.matches.push((i, j));
            assignment.total_cost += cost[(i, j)];
            col_used[j] = true;
        } else {
            assignment.unmatched_a.push(i);
        }
    }
    assignment.unmatched_b = (0..n).filter(|&j| !col_used[j]).collect();
    assignment
}
