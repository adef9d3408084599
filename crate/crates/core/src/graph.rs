//! Communication graphs and graph-derived constraint matrices.
//!
//! A [`Graph`] is a connected, undirected, simple graph; nodes may carry 2-D
//! coordinates when generated geometrically. [`build_constraint_matrices`]
//! derives the stacked matrices used by the optimizers from the block
//! incidence matrix: for edge `e = (i, j)` with `i < j`, block row `e` of `B`
//! holds `+I` at node `i` and `-I` at node `j`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::seeds;
use crate::Result;

/// Placement attempts before giving up on a connected geometric draw.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// An undirected communication graph.
///
/// Invariants (enforced at construction and on deserialization): no self
/// loops, no duplicate edges, every edge stored with `i < j`, neighbor lists
/// sorted and consistent with the edge list, and the graph is connected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    coords: Option<Vec<[f64; 2]>>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<[f64; 2]>>,
}

impl From<Graph> for GraphJson {
    fn from(g: Graph) -> Self {
        GraphJson {
            n: g.n,
            edges: g.edges,
            coords: g.coords,
        }
    }
}

impl TryFrom<GraphJson> for Graph {
    type Error = Error;

    fn try_from(j: GraphJson) -> Result<Graph> {
        Graph::with_coords(j.n, j.edges, j.coords)
    }
}

impl Graph {
    /// Build a graph from an explicit edge list. Edges may be given in either
    /// orientation; they are normalized to `i < j` and sorted.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::with_coords(n, edges.into_iter().collect(), None)
    }

    fn with_coords(
        n: usize,
        edges: Vec<(usize, usize)>,
        coords: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!(
                "need at least 2 nodes, got {n}"
            )));
        }
        if let Some(c) = &coords {
            if c.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "{} coordinate pairs for {n} nodes",
                    c.len()
                )));
            }
        }
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a},{b}) out of range for n = {n}"
                )));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        if norm.len() < n - 1 {
            return Err(Error::InvalidGraph("too few edges to be connected".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &norm {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let g = Graph {
            n,
            edges: norm,
            coords,
            neighbors,
        };
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.n
    }

    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Edge list, each pair ordered `i < j`, sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Node coordinates when the graph was generated geometrically.
    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Degree of node `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Sum of all node degrees (`2 m`).
    pub fn degree_sum(&self) -> usize {
        2 * self.edges.len()
    }
}

/// Generate a random geometric graph: `n` nodes placed i.i.d. uniformly in
/// the unit square, an edge wherever the squared distance is below
/// `radius_sq`. Disconnected draws are rejected and the placement resampled
/// from the same stream, so the result is deterministic in `seed`.
pub fn generate_geometric_graph(n: usize, radius_sq: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidGraph(format!(
            "need at least 2 nodes, got {n}"
        )));
    }
    if radius_sq.is_nan() || radius_sq <= 0.0 {
        return Err(Error::InvalidGraph(format!(
            "radius_sq must be positive, got {radius_sq}"
        )));
    }
    let mut rng = seeds::rng(seed);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let coords: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                if dx * dx + dy * dy < radius_sq {
                    edges.push((i, j));
                }
            }
        }
        if edges.len() < n - 1 {
            continue;
        }
        match Graph::with_coords(n, edges, Some(coords)) {
            Ok(g) => return Ok(g),
            Err(Error::InvalidGraph(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Disconnected {
        attempts: MAX_PLACEMENT_ATTEMPTS,
        radius_sq,
    })
}

/// A node's view of one incident edge, precomputed for the message-passing
/// updates.
#[derive(Debug, Clone, Copy)]
pub struct IncidentEdge {
    /// The neighbor on the other end.
    pub nbr: usize,
    /// Index into the edge list.
    pub edge: usize,
    /// `B_{i|j}` for this node: `+1` when this node is the smaller endpoint.
    pub sign: f64,
}

impl IncidentEdge {
    /// True when this node owns the first (top-half) dual block of the edge.
    pub fn is_top(&self) -> bool {
        self.sign > 0.0
    }
}

/// Stacked constraint matrices for one graph and block size.
///
/// All matrices are dense; problem sizes here stay small enough that
/// sparsity buys nothing. `b` and `d` are the zero vectors of the edge
/// constraints `x_i = x_j`.
#[derive(Debug, Clone)]
pub struct ConstraintMatrices {
    graph: Graph,
    u: usize,
    /// Block incidence matrix, `m*u x n*u`.
    pub b_mat: DMatrix<f64>,
    /// Positive part of `b_mat`.
    pub b_plus: DMatrix<f64>,
    /// Negative part of `b_mat`.
    pub b_minus: DMatrix<f64>,
    /// `[B+; B-]`, `2*m*u x n*u`.
    pub c_mat: DMatrix<f64>,
    /// `P * C` (row halves of `c_mat` swapped).
    pub pc_mat: DMatrix<f64>,
    /// `[B+; -B-]`, `2*m*u x n*u`.
    pub m_mat: DMatrix<f64>,
    /// `[-I; -I]`, `2*m*u x m*u`.
    pub w_mat: DMatrix<f64>,
    /// Right-hand side of `B x = b` (zero).
    pub b_vec: DVector<f64>,
    /// `d = [b; b] / 2` (zero).
    pub d_vec: DVector<f64>,
    incident: Vec<Vec<IncidentEdge>>,
}

/// Assemble the constraint matrices of `g` for block size `u`.
pub fn build_constraint_matrices(g: &Graph, u: usize) -> ConstraintMatrices {
    assert!(u >= 1, "block size must be at least 1");
    let (n, m) = (g.n(), g.m());
    let mut b_mat = DMatrix::zeros(m * u, n * u);
    let mut b_plus = DMatrix::zeros(m * u, n * u);
    let mut b_minus = DMatrix::zeros(m * u, n * u);
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        for k in 0..u {
            b_mat[(e * u + k, i * u + k)] = 1.0;
            b_mat[(e * u + k, j * u + k)] = -1.0;
            b_plus[(e * u + k, i * u + k)] = 1.0;
            b_minus[(e * u + k, j * u + k)] = -1.0;
        }
    }
    let mut c_mat = DMatrix::zeros(2 * m * u, n * u);
    let mut pc_mat = DMatrix::zeros(2 * m * u, n * u);
    let mut m_mat = DMatrix::zeros(2 * m * u, n * u);
    c_mat.rows_mut(0, m * u).copy_from(&b_plus);
    c_mat.rows_mut(m * u, m * u).copy_from(&b_minus);
    pc_mat.rows_mut(0, m * u).copy_from(&b_minus);
    pc_mat.rows_mut(m * u, m * u).copy_from(&b_plus);
    m_mat.rows_mut(0, m * u).copy_from(&b_plus);
    m_mat.rows_mut(m * u, m * u).copy_from(&(-&b_minus));
    let mut w_mat = DMatrix::zeros(2 * m * u, m * u);
    for r in 0..m * u {
        w_mat[(r, r)] = -1.0;
        w_mat[(m * u + r, r)] = -1.0;
    }
    let incident = (0..n)
        .map(|i| {
            g.neighbors(i)
                .iter()
                .map(|&j| {
                    let key = (i.min(j), i.max(j));
                    let edge = g.edges().binary_search(&key).expect("edge present");
                    IncidentEdge {
                        nbr: j,
                        edge,
                        sign: if i < j { 1.0 } else { -1.0 },
                    }
                })
                .collect()
        })
        .collect();
    ConstraintMatrices {
        graph: g.clone(),
        u,
        b_mat,
        b_plus,
        b_minus,
        c_mat,
        pc_mat,
        m_mat,
        w_mat,
        b_vec: DVector::zeros(m * u),
        d_vec: DVector::zeros(2 * m * u),
        incident,
    }
}

impl ConstraintMatrices {
    /// The graph these matrices were built for.
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Block size `u`.
    pub fn block(&self) -> usize {
        self.u
    }

    /// Primal dimension `n*u`.
    pub fn primal_dim(&self) -> usize {
        self.graph.n() * self.u
    }

    /// Edge-space dimension `m*u`.
    pub fn edge_dim(&self) -> usize {
        self.graph.m() * self.u
    }

    /// Dual dimension of PDMM and ADMM, `2*m*u`.
    pub fn dual_dim(&self) -> usize {
        2 * self.graph.m() * self.u
    }

    /// Incident-edge views of node `i`.
    pub fn incident(&self, i: usize) -> &[IncidentEdge] {
        &self.incident[i]
    }

    /// Apply the permutation `P`, swapping the first `m*u` coordinates with
    /// the last `m*u`.
    pub fn swap_halves(&self, v: &DVector<f64>) -> DVector<f64> {
        let half = self.edge_dim();
        assert_eq!(v.len(), 2 * half, "P applies to 2*m*u vectors");
        let mut out = DVector::zeros(2 * half);
        out.rows_mut(0, half).copy_from(&v.rows(half, half));
        out.rows_mut(half, half).copy_from(&v.rows(0, half));
        out
    }

    /// Start of the dual block for the directed pair `i -> j` along incident
    /// edge `inc` of node `i`: top half when `i` is the smaller endpoint.
    pub fn dual_block_start(&self, inc: &IncidentEdge) -> usize {
        if inc.is_top() {
            inc.edge * self.u
        } else {
            self.edge_dim() + inc.edge * self.u
        }
    }

    /// Start of the dual block for the reverse direction `j -> i`.
    pub fn dual_block_start_rev(&self, inc: &IncidentEdge) -> usize {
        if inc.is_top() {
            self.edge_dim() + inc.edge * self.u
        } else {
            inc.edge * self.u
        }
    }
}
