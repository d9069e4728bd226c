//! Forward auction for the linear assignment problem with ε-scaling.
//!
//! Costs are quantised onto an integer grid and multiplied by `n + 1`, so the
//! last scaling phase runs with ε = 1 on a problem whose integral optimum is
//! unique to within one grid step: the returned assignment is optimal for the
//! quantised costs.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Default cost quantum for the auction grid.
pub const DEFAULT_RESOLUTION: f64 = 1e-6;

/// Largest integer magnitude used on the scaled grid.
const GRID_LIMIT: f64 = (1u64 << 44) as f64;

/// ε reduction factor between scaling phases.
const SCALING_FACTOR: i64 = 6;

/// Dense cost matrix; `f64::INFINITY` marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl AssignmentMatrix {
    /// A matrix with every pair forbidden.
    pub fn forbidden(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            costs: vec![f64::INFINITY; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self {
            rows: rows.len(),
            cols,
            costs: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cost: f64) {
        self.costs[row * self.cols + col] = cost;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.costs[row * self.cols..(row + 1) * self.cols]
    }
}

/// Row-to-column assignment and its (unquantised) total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// `resolution` is the cost quantum; the result is optimal for costs rounded to
/// that grid and therefore within `rows * resolution` of the true optimum. The
/// grid is coarsened automatically when the cost range would overflow it.
pub fn auction_solve(m: &AssignmentMatrix, resolution: f64) -> Result<Assignment> {
    let rows = m.rows;
    let n = m.cols;
    if rows > n {
        return Err(Error::Infeasible(format!(
            "{rows} rows but only {n} columns"
        )));
    }
    if rows == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        });
    }
    for r in 0..rows {
        if m.row(r)
            .iter()
            .any(|c| c.is_nan() || *c == f64::NEG_INFINITY)
        {
            return Err(Error::Infeasible(format!("row {r} has a non-finite cost")));
        }
        if m.row(r).iter().all(|c| !c.is_finite()) {
            return Err(Error::Infeasible(format!(
                "row {r} has no admissible column"
            )));
        }
    }

    let max_abs = m
        .costs
        .iter()
        .filter(|c| c.is_finite())
        .fold(0.0f64, |a, c| a.max(c.abs()));
    let scale_mult = (n + 1) as f64;
    let quantum = resolution
        .max(max_abs * scale_mult / GRID_LIMIT)
        .max(f64::MIN_POSITIVE);

    // Sparse benefit lists over a square problem; padded rows accept any column at zero cost.
    let mut adjacency: Vec<Vec<(usize, i64)>> = Vec::with_capacity(n);
    let mut min_b = i64::MAX;
    let mut max_b = i64::MIN;
    for r in 0..n {
        let mut arcs = Vec::new();
        for c in 0..n {
            let cost = if r < rows { m.get(r, c) } else { 0.0 };
            if cost.is_finite() {
                let b = -((cost / quantum).round() as i64) * (n as i64 + 1);
                min_b = min_b.min(b);
                max_b = max_b.max(b);
                arcs.push((c, b));
            }
        }
        adjacency.push(arcs);
    }
    if !has_perfect_matching(&adjacency, n) {
        return Err(Error::Infeasible("no complete assignment exists".into()));
    }

    let range = (max_b - min_b).max(1);
    let mut prices = vec![0i64; n];
    let mut eps = (range / SCALING_FACTOR).max(1);
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    loop {
        owner.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        let mut queue: VecDeque<usize> = (0..n).collect();
        while let Some(person) = queue.pop_front() {
            let arcs = &adjacency[person];
            let mut best = usize::MAX;
            let mut v1 = i64::MIN;
            let mut v2 = i64::MIN;
            for &(c, b) in arcs {
                let v = b - prices[c];
                if v > v1 {
                    v2 = v1;
                    v1 = v;
                    best = c;
                } else if v > v2 {
                    v2 = v;
                }
            }
            let increment = if v2 == i64::MIN {
                range + eps
            } else {
                v1 - v2 + eps
            };
            prices[best] += increment;
            if let Some(prev) = owner[best] {
                assigned[prev] = None;
                queue.push_back(prev);
            }
            owner[best] = Some(person);
            assigned[person] = Some(best);
        }
        if eps == 1 {
            break;
        }
        eps = (eps / SCALING_FACTOR).max(1);
    }

    let row_to_col: Vec<usize> = assigned[..rows]
        .iter()
        .map(|a| a.expect("auction terminated with an unassigned row"))
        .collect();
    let cost = row_to_col
        .iter()
        .enumerate()
        .map(|(r, &c)| m.get(r, c))
        .sum();
    Ok(Assignment { row_to_col, cost })
}

/// Kuhn's augmenting-path matching with a greedy start.
fn has_perfect_matching(adjacency: &[Vec<(usize, i64)>], n: usize) -> bool {
    let mut col_owner: Vec<Option<usize>> = vec![None; n];
    let mut unmatched = Vec::new();
    for (r, arcs) in adjacency.iter().enumerate() {
        match arcs.iter().find(|(c, _)| col_owner[*c].is_none()) {
            Some(&(c, _)) => col_owner[c] = Some(r),
            None => unmatched.push(r),
        }
    }
    let mut visited = vec![false; n];
    for r in unmatched {
        visited.iter_mut().for_each(|v| *v = false);
        if !augment(r, adjacency, &mut col_owner, &mut visited) {
            return false;
        }
    }
    true
}

fn augment(
    row: usize,
    adjacency: &[Vec<(usize, i64)>],
    col_owner: &mut [Option<usize>],
    visited: &mut [bool],
) -> bool {
    for &(c, _) in &adjacency[row] {
        if visited[c] {
            continue;
        }
        visited[c] = true;
        if col_owner[c].is_none() || augment(col_owner[c].unwrap(), adjacency, col_owner, visited) {
            col_owner[c] = Some(row);
            return true;
        }
    }
    false
}
