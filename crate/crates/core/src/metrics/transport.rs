//! Exact transportation simplex.
//!
//! Supports are tiny throughout this crate (a handful of points), so the
//! solver favours exactness and guaranteed termination over speed: the basis
//! is a spanning tree of the bipartite supply/demand graph, the initial
//! basis comes from the north-west corner rule, and pivoting follows Bland's
//! rule (lowest-index entering cell, lowest-index leaving cell on ties),
//! which rules out cycling on degenerate instances.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// Optimal total cost.
    pub cost: f64,
    /// Row-major `rows x cols` flow matrix.
    pub flow: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

const MAX_PIVOTS: usize = 100_000;

/// Minimizes `sum_ij flow_ij * cost_ij` over flows with row sums `supply`
/// and column sums `demand`. Both marginals must carry the same mass.
pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(Error::InvalidDistribution("empty marginal".into()));
    }
    if cost.len() != m * n {
        return Err(Error::DimensionMismatch {
            expected: m * n,
            got: cost.len(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("non-finite transport cost".into()));
    }
    let total_a: f64 = supply.iter().sum();
    let total_b: f64 = demand.iter().sum();
    if supply.iter().chain(demand).any(|w| !(*w >= 0.0))
        || (total_a - total_b).abs() > 1e-9 * total_a.max(1.0)
    {
        return Err(Error::InvalidDistribution(format!(
            "marginals are not balanced nonnegative vectors ({total_a} vs {total_b})"
        )));
    }

    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    let mut basis: Vec<usize> = Vec::with_capacity(m + n - 1);

    // North-west corner: every step advances exactly one of (i, j), so the
    // staircase has m + n - 1 cells and forms a spanning tree.
    {
        let mut a = supply.to_vec();
        let mut b = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = a[i].min(b[j]);
            flow[i * n + j] = q;
            a[i] -= q;
            b[j] -= q;
            basic[i * n + j] = true;
            basis.push(i * n + j);
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && a[i] <= b[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let scale = 1.0 + cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-12 * scale;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    let mut parent: Vec<Option<usize>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    let mut queue = VecDeque::new();

    for _ in 0..MAX_PIVOTS {
        // Node k < m is row k, node m + j is column j; edges are basic cells.
        for list in adj.iter_mut() {
            list.clear();
        }
        for &c in &basis {
            adj[c / n].push(c);
            adj[m + c % n].push(c);
        }

        // Dual potentials: u_i + v_j = c_ij on the tree.
        seen.iter_mut().for_each(|s| *s = false);
        u[0] = 0.0;
        seen[0] = true;
        queue.clear();
        queue.push_back(0);
        while let Some(node) = queue.pop_front() {
            for &c in &adj[node] {
                let (i, j) = (c / n, c % n);
                let other = if node < m { m + j } else { i };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                if other < m {
                    u[i] = cost[c] - v[j];
                } else {
                    v[j] = cost[c] - u[i];
                }
                queue.push_back(other);
            }
        }

        let entering = (0..m * n).find(|&c| !basic[c] && cost[c] - u[c / n] - v[c % n] < -tol);
        let Some(enter) = entering else {
            let total = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
            return Ok(TransportPlan {
                cost: total,
                flow,
                rows: m,
                cols: n,
            });
        };
        let (ei, ej) = (enter / n, enter % n);

        // Tree path from column ej to row ei closes the cycle with `enter`.
        parent.iter_mut().for_each(|p| *p = None);
        seen.iter_mut().for_each(|s| *s = false);
        queue.clear();
        seen[m + ej] = true;
        queue.push_back(m + ej);
        while let Some(node) = queue.pop_front() {
            if node == ei {
                break;
            }
            for &c in &adj[node] {
                let other = if node < m { m + c % n } else { c / n };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some(c);
                    queue.push_back(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = ei;
        while node != m + ej {
            let c = parent[node].ok_or_else(|| Error::Numeric("transport basis is not a tree".into()))?;
            path.push(c);
            node = if node < m { m + c % n } else { c / n };
        }
        // `path` runs from row ei back to column ej; the cell touching column
        // ej loses flow first, then signs alternate.
        path.reverse();

        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for &c in path.iter().step_by(2) {
            if flow[c] < theta || (flow[c] == theta && c < leave) {
                theta = flow[c];
                leave = c;
            }
        }
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[c] -= theta;
            } else {
                flow[c] += theta;
            }
        }
        flow[enter] = theta;
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;
        let pos = basis.iter().position(|&c| c == leave).expect("leaving cell is basic");
        basis[pos] = enter;
    }
    Err(Error::Numeric("transport simplex did not converge".into()))
}
