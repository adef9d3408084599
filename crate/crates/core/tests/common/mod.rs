#![allow(dead_code)] // each test binary uses its own subset

//! Independent oracles for the integration suites. Everything here computes
//! reference answers along a different route than the library (elimination
//! instead of SVD, Gram-Schmidt instead of singular vectors, BFS instead of
//! union-find, grid search instead of coordinate descent).

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

/// Rank by Gaussian elimination with partial pivoting.
pub fn rank_by_elimination(m: &DMatrix<f64>, tol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let scale = a.amax().max(1.0);
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        let (mut pivot, mut pivot_val) = (row, 0.0f64);
        for r in row..rows {
            if a[(r, col)].abs() > pivot_val {
                pivot_val = a[(r, col)].abs();
                pivot = r;
            }
        }
        if pivot_val <= tol * scale {
            continue;
        }
        a.swap_rows(row, pivot);
        for r in (row + 1)..rows {
            let f = a[(r, col)] / a[(row, col)];
            for c in col..cols {
                a[(r, c)] -= f * a[(row, c)];
            }
        }
        rank += 1;
        row += 1;
        if row == rows {
            break;
        }
    }
    rank
}

/// Orthonormal basis of the column span by modified Gram-Schmidt with one
/// re-orthogonalization pass.
pub fn gram_schmidt_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let scale = m
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for col in m.column_iter() {
        let mut v = col.into_owned();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > tol * scale {
            basis.push(v / norm);
        }
    }
    let mut out = DMatrix::zeros(m.nrows(), basis.len());
    for (i, b) in basis.iter().enumerate() {
        out.column_mut(i).copy_from(b);
    }
    out
}

/// Orthogonal projection of `v` onto the span of the (orthonormal) columns.
pub fn project_onto(basis: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    basis * (basis.transpose() * v)
}

/// Connected components of the honest-induced subgraph by breadth-first
/// search over an adjacency list.
pub fn bfs_honest_components(
    n: usize,
    edges: &[(usize, usize)],
    corrupted: &BTreeSet<usize>,
) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if !corrupted.contains(&a) && !corrupted.contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if corrupted.contains(&start) || seen[start] {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let mut comp = vec![start];
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                    queue.push_back(j);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

/// Coarse-to-fine grid search for `min g(x)` over a box in two variables.
pub fn grid_search_2d(g: impl Fn(f64, f64) -> f64, lo: f64, hi: f64) -> (f64, (f64, f64)) {
    let mut center = (0.5 * (lo + hi), 0.5 * (lo + hi));
    let mut radius = 0.5 * (hi - lo);
    let mut best = (g(center.0, center.1), center);
    for _ in 0..24 {
        let steps = 20;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = center.0 - radius + 2.0 * radius * i as f64 / steps as f64;
                let y = center.1 - radius + 2.0 * radius * j as f64 / steps as f64;
                let val = g(x, y);
                if val < best.0 {
                    best = (val, (x, y));
                }
            }
        }
        center = best.1;
        radius *= 0.35;
    }
    best
}
