//! Node-local protocol rounds for PDMM, averaged PDMM, ADMM and dual ascent,
//! plus the [`run`] driver that produces traces.
//!
//! Every round exists in two forms: the message-passing form here, where each
//! node touches only its own block and its neighbors' broadcasts, and the
//! stacked-matrix form in [`stacked`], which evaluates the global update
//! equations directly. The two must agree to machine precision; the test
//! suites hold them against each other.

pub mod stacked;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::ConstraintMatrices;
use crate::problems::{LocalCache, ProblemInstance};
use crate::seeds;
use crate::subspace::{InitMode, SubspaceBasis};
use crate::trace::{Trace, TraceMeta, TraceRecord};
use crate::Result;

/// The four distributed optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Pdmm,
    AveragedPdmm,
    Admm,
    DualAscent,
}

impl OptimizerKind {
    /// Optimizers sharing a dual space and convergent subspace.
    pub fn subspace_family(self) -> OptimizerKind {
        match self {
            OptimizerKind::AveragedPdmm => OptimizerKind::Pdmm,
            k => k,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Pdmm => "pdmm",
            OptimizerKind::AveragedPdmm => "averaged_pdmm",
            OptimizerKind::Admm => "admm",
            OptimizerKind::DualAscent => "dual_ascent",
        }
    }
}

/// Round scheduling: all nodes per round, or one uniformly random node per
/// round (the activation sequence is a pure function of the seed and round).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Synchronous,
    Asynchronous { seed: u64 },
}

/// Step parameters shared by all optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    /// Penalty parameter of PDMM/ADMM.
    pub c: f64,
    /// Averaging weight of averaged PDMM.
    pub theta: f64,
    /// Dual-ascent step size; `None` picks `1 / lambda_max(B B')`, which
    /// contracts on the quadratic applications.
    pub t: Option<f64>,
    pub schedule: Schedule,
    /// Count a broadcast as one package instead of one per neighbor.
    pub broadcast_counts_once: bool,
    /// Primal infinity-norm bound beyond which dual ascent reports
    /// divergence.
    pub divergence_bound: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            c: 0.4,
            theta: 0.5,
            t: None,
            schedule: Schedule::Synchronous,
            broadcast_counts_once: false,
            // High-variance dual initializations pass through the inverse
            // local Hessians, so contracting transients can reach ~1e12;
            // geometric blow-up crosses any bound within a few rounds.
            divergence_bound: 1e30,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c.is_nan() || self.c <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "step.c must be positive, got {}",
                self.c
            )));
        }
        if self.theta.is_nan() || self.theta <= 0.0 || self.theta >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "step.theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        if let Some(t) = self.t {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "step.t must be positive, got {t}"
                )));
            }
        }
        if self.divergence_bound.is_nan() || self.divergence_bound <= 0.0 {
            return Err(Error::InvalidConfig(
                "step.divergence_bound must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Optimizer-specific dual variables.
#[derive(Debug, Clone, PartialEq)]
pub enum DualState {
    /// PDMM and averaged PDMM: one block per directed edge (`2 m u`).
    Pdmm { lambda: DVector<f64> },
    /// ADMM: dual `v` (`2 m u`) and edge auxiliary `z` (`m u`).
    Admm { v: DVector<f64>, z: DVector<f64> },
    /// Dual ascent: one block per undirected edge (`m u`).
    DualAscent { u_vec: DVector<f64> },
}

impl DualState {
    /// The vector whose convergent/non-convergent split the traces track.
    pub fn primary(&self) -> &DVector<f64> {
        match self {
            DualState::Pdmm { lambda } => lambda,
            DualState::Admm { v, .. } => v,
            DualState::DualAscent { u_vec } => u_vec,
        }
    }
}

/// Mutable per-run state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Stacked primal vector (`n u`).
    pub x: DVector<f64>,
    pub duals: DualState,
    /// Completed rounds.
    pub k: usize,
    /// Cumulative point-to-point message packages.
    pub transmissions: u64,
}

impl OptimizerState {
    /// Fresh state with `x = 0` and the supplied dual initialization.
    pub fn new(
        kind: OptimizerKind,
        cm: &ConstraintMatrices,
        dual_init: DVector<f64>,
    ) -> Result<Self> {
        let expect = dual_dim(kind, cm);
        if dual_init.len() != expect {
            return Err(Error::DimensionMismatch {
                context: "dual initialization",
                expected: expect,
                got: dual_init.len(),
            });
        }
        let duals = match kind.subspace_family() {
            OptimizerKind::Pdmm => DualState::Pdmm { lambda: dual_init },
            OptimizerKind::Admm => DualState::Admm {
                v: dual_init,
                z: DVector::zeros(cm.edge_dim()),
            },
            OptimizerKind::DualAscent => DualState::DualAscent { u_vec: dual_init },
            OptimizerKind::AveragedPdmm => unreachable!("family maps onto pdmm"),
        };
        Ok(OptimizerState {
            x: DVector::zeros(cm.primal_dim()),
            duals,
            k: 0,
            transmissions: 0,
        })
    }
}

/// Dual dimension used by the optimizer.
pub fn dual_dim(kind: OptimizerKind, cm: &ConstraintMatrices) -> usize {
    match kind.subspace_family() {
        OptimizerKind::DualAscent => cm.edge_dim(),
        _ => cm.dual_dim(),
    }
}

/// Default dual-ascent step size `1 / lambda_max(B H^-1 B')`, the inverse of
/// the dual-function curvature bound, which contracts on the quadratic
/// applications. For consensus (`H = I`) this is `1 / lambda_max(B B')`,
/// whose nonzero spectrum equals the graph Laplacian's; for least squares it
/// accounts for the local Hessians `Q_i'Q_i`. LASSO (no curvature to invert)
/// falls back to the consensus value; dual ascent carries no guarantee
/// there.
pub fn default_dual_ascent_step(cm: &ConstraintMatrices, problem: &ProblemInstance) -> f64 {
    use crate::problems::ProblemKind;
    let g = cm.graph();
    match problem.kind() {
        ProblemKind::Consensus | ProblemKind::Lasso => {
            let n = g.n();
            let mut lap = nalgebra::DMatrix::zeros(n, n);
            for i in 0..n {
                lap[(i, i)] = g.degree(i) as f64;
            }
            for &(i, j) in g.edges() {
                lap[(i, j)] = -1.0;
                lap[(j, i)] = -1.0;
            }
            1.0 / lap.symmetric_eigen().eigenvalues.max()
        }
        ProblemKind::LeastSquares => {
            let (h, _) = problem.stacked_quadratic();
            let h_inv = h
                .cholesky()
                .expect("least squares local Hessians are positive definite")
                .inverse();
            let curvature = &cm.b_mat * h_inv * cm.b_mat.transpose();
            1.0 / curvature.symmetric_eigen().eigenvalues.max()
        }
    }
}

fn activated_node(seed: u64, round: usize, n: usize) -> usize {
    seeds::rng(seeds::derive(seed, round as u64)).random_range(0..n)
}

fn ridge_scales(kind: OptimizerKind, cm: &ConstraintMatrices, cfg: &StepConfig) -> Vec<f64> {
    let g = cm.graph();
    match kind.subspace_family() {
        OptimizerKind::DualAscent => vec![0.0; g.n()],
        _ => (0..g.n()).map(|i| cfg.c * g.degree(i) as f64).collect(),
    }
}

fn build_cache(
    kind: OptimizerKind,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<LocalCache> {
    problem.build_cache(&ridge_scales(kind, cm, cfg))
}

fn sync_transmissions(kind: OptimizerKind, cm: &ConstraintMatrices, cfg: &StepConfig) -> u64 {
    match kind {
        // ADMM exchanges per edge in both directions; it is not a broadcast.
        OptimizerKind::Admm => cm.graph().degree_sum() as u64,
        _ if cfg.broadcast_counts_once => cm.graph().n() as u64,
        _ => cm.graph().degree_sum() as u64,
    }
}

fn async_transmissions(
    kind: OptimizerKind,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    i: usize,
) -> u64 {
    match kind {
        OptimizerKind::Admm => cm.graph().degree(i) as u64,
        _ if cfg.broadcast_counts_once => 1,
        _ => cm.graph().degree(i) as u64,
    }
}

/// Neighbor aggregate of the PDMM x-update at node `i`:
/// `sum_j (c x_j - B_{i|j} lambda_{j|i})`.
fn pdmm_aggregate(
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    i: usize,
) -> DVector<f64> {
    let u = cm.block();
    let mut agg = DVector::zeros(u);
    for inc in cm.incident(i) {
        let xj = x.rows(inc.nbr * u, u);
        let lam = lambda.rows(cm.dual_block_start_rev(inc), u);
        agg.axpy(cfg.c, &xj, 1.0);
        agg.axpy(-inc.sign, &lam, 1.0);
    }
    agg
}

fn pdmm_x_phase(
    state: &OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    cache: &LocalCache,
) -> Result<DVector<f64>> {
    let u = cm.block();
    let mut new_x = DVector::zeros(cm.primal_dim());
    for i in 0..cm.graph().n() {
        let agg = pdmm_aggregate(cm, cfg, &state.x, pdmm_lambda(state), i);
        let warm = state.x.rows(i * u, u).into_owned();
        let xi = problem.local_x_update_cached(cache, i, &agg, Some(&warm))?;
        new_x.rows_mut(i * u, u).copy_from(&xi);
    }
    Ok(new_x)
}

fn pdmm_lambda(state: &OptimizerState) -> &DVector<f64> {
    match &state.duals {
        DualState::Pdmm { lambda } => lambda,
        _ => panic!("state does not belong to a PDMM run"),
    }
}

/// One PDMM round: Peaceman-Rachford primal update followed by the permuted
/// dual update. Synchronous mode updates every node from its neighbors'
/// previous broadcasts; asynchronous mode activates one uniformly random
/// node, which broadcasts its new block so its neighbors can update the
/// duals directed at them.
pub fn pdmm_round(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    let cache = build_cache(OptimizerKind::Pdmm, problem, cm, cfg)?;
    pdmm_round_cached(state, problem, cm, cfg, &cache)
}

pub(crate) fn pdmm_round_cached(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    cache: &LocalCache,
) -> Result<()> {
    let u = cm.block();
    match cfg.schedule {
        Schedule::Synchronous => {
            let new_x = pdmm_x_phase(state, problem, cm, cfg, cache)?;
            let lambda = pdmm_lambda(state);
            let mut new_lambda = DVector::zeros(lambda.len());
            for i in 0..cm.graph().n() {
                for inc in cm.incident(i) {
                    let fwd = cm.dual_block_start(inc);
                    let rev = cm.dual_block_start_rev(inc);
                    for k in 0..u {
                        new_lambda[fwd + k] = lambda[rev + k]
                            + cfg.c * inc.sign * (new_x[i * u + k] - state.x[inc.nbr * u + k]);
                    }
                }
            }
            state.x = new_x;
            state.duals = DualState::Pdmm { lambda: new_lambda };
            state.transmissions += sync_transmissions(OptimizerKind::Pdmm, cm, cfg);
        }
        Schedule::Asynchronous { seed } => {
            let i = activated_node(seed, state.k, cm.graph().n());
            let agg = pdmm_aggregate(cm, cfg, &state.x, pdmm_lambda(state), i);
            let warm = state.x.rows(i * u, u).into_owned();
            let xi = problem.local_x_update_cached(cache, i, &agg, Some(&warm))?;
            state.x.rows_mut(i * u, u).copy_from(&xi);
            let DualState::Pdmm { lambda } = &mut state.duals else {
                unreachable!()
            };
            for inc in cm.incident(i) {
                let fwd = cm.dual_block_start(inc);
                let rev = cm.dual_block_start_rev(inc);
                for k in 0..u {
                    lambda[fwd + k] = lambda[rev + k]
                        + cfg.c * inc.sign * (state.x[i * u + k] - state.x[inc.nbr * u + k]);
                }
            }
            state.transmissions += async_transmissions(OptimizerKind::Pdmm, cm, cfg, i);
        }
    }
    state.k += 1;
    Ok(())
}

/// One averaged-PDMM round: the x-update is plain PDMM; the dual keeps
/// weight `theta` on its previous value and `1 - theta` on the permuted
/// PDMM update, the averaged fixed-point iteration that stays convergent on
/// merely convex objectives. At `theta -> 0` this degenerates to
/// [`pdmm_round`].
pub fn averaged_pdmm_round(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    let cache = build_cache(OptimizerKind::AveragedPdmm, problem, cm, cfg)?;
    averaged_pdmm_round_cached(state, problem, cm, cfg, &cache)
}

pub(crate) fn averaged_pdmm_round_cached(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    cache: &LocalCache,
) -> Result<()> {
    let u = cm.block();
    let th = cfg.theta;
    match cfg.schedule {
        Schedule::Synchronous => {
            let new_x = pdmm_x_phase(state, problem, cm, cfg, cache)?;
            let lambda = pdmm_lambda(state);
            let mut new_lambda = DVector::zeros(lambda.len());
            for i in 0..cm.graph().n() {
                for inc in cm.incident(i) {
                    let fwd = cm.dual_block_start(inc);
                    let rev = cm.dual_block_start_rev(inc);
                    for k in 0..u {
                        let permuted = lambda[rev + k]
                            + cfg.c * inc.sign * (new_x[i * u + k] - state.x[inc.nbr * u + k]);
                        new_lambda[fwd + k] = th * lambda[fwd + k] + (1.0 - th) * permuted;
                    }
                }
            }
            state.x = new_x;
            state.duals = DualState::Pdmm { lambda: new_lambda };
            state.transmissions += sync_transmissions(OptimizerKind::AveragedPdmm, cm, cfg);
        }
        Schedule::Asynchronous { seed } => {
            let i = activated_node(seed, state.k, cm.graph().n());
            let agg = pdmm_aggregate(cm, cfg, &state.x, pdmm_lambda(state), i);
            let warm = state.x.rows(i * u, u).into_owned();
            let xi = problem.local_x_update_cached(cache, i, &agg, Some(&warm))?;
            state.x.rows_mut(i * u, u).copy_from(&xi);
            let x = state.x.clone();
            let DualState::Pdmm { lambda } = &mut state.duals else {
                unreachable!()
            };
            for inc in cm.incident(i) {
                let fwd = cm.dual_block_start(inc);
                let rev = cm.dual_block_start_rev(inc);
                for k in 0..u {
                    let permuted =
                        lambda[rev + k] + cfg.c * inc.sign * (x[i * u + k] - x[inc.nbr * u + k]);
                    lambda[fwd + k] = th * lambda[fwd + k] + (1.0 - th) * permuted;
                }
            }
            state.transmissions += async_transmissions(OptimizerKind::AveragedPdmm, cm, cfg, i);
        }
    }
    state.k += 1;
    Ok(())
}

/// Neighbor aggregate of the ADMM x-update at node `i`:
/// `sum_e (c z_e - v_{side(i), e})`.
fn admm_aggregate(
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    v: &DVector<f64>,
    z: &DVector<f64>,
    i: usize,
) -> DVector<f64> {
    let u = cm.block();
    let mut agg = DVector::zeros(u);
    for inc in cm.incident(i) {
        let ze = z.rows(inc.edge * u, u);
        let ve = v.rows(cm.dual_block_start(inc), u);
        agg.axpy(cfg.c, &ze, 1.0);
        agg.axpy(-1.0, &ve, 1.0);
    }
    agg
}

/// Closed-form ADMM z-update on edge `e = (a, b)` given fresh endpoint
/// blocks; uses `W'W = 2I`.
fn admm_z_edge(
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    v: &DVector<f64>,
    x: &DVector<f64>,
    e: usize,
) -> DVector<f64> {
    let u = cm.block();
    let mu = cm.edge_dim();
    let (a, b) = cm.graph().edges()[e];
    let mut z = DVector::zeros(u);
    for k in 0..u {
        let v_top = v[e * u + k];
        let v_bot = v[mu + e * u + k];
        z[k] = (v_top + v_bot) / (2.0 * cfg.c) + (x[a * u + k] + x[b * u + k]) / 2.0;
    }
    z
}

/// One ADMM round: x-minimization, closed-form z-minimization, then the
/// dual ascent on `v`. Requires pairwise exchanges rather than broadcasts.
pub fn admm_round(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    let cache = build_cache(OptimizerKind::Admm, problem, cm, cfg)?;
    admm_round_cached(state, problem, cm, cfg, &cache)
}

pub(crate) fn admm_round_cached(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    cache: &LocalCache,
) -> Result<()> {
    let u = cm.block();
    let mu = cm.edge_dim();
    match cfg.schedule {
        Schedule::Synchronous => {
            let (v, z) = match &state.duals {
                DualState::Admm { v, z } => (v.clone(), z.clone()),
                _ => panic!("state does not belong to an ADMM run"),
            };
            let mut new_x = DVector::zeros(cm.primal_dim());
            for i in 0..cm.graph().n() {
                let agg = admm_aggregate(cm, cfg, &v, &z, i);
                let warm = state.x.rows(i * u, u).into_owned();
                let xi = problem.local_x_update_cached(cache, i, &agg, Some(&warm))?;
                new_x.rows_mut(i * u, u).copy_from(&xi);
            }
            let mut new_z = DVector::zeros(mu);
            for e in 0..cm.graph().m() {
                new_z
                    .rows_mut(e * u, u)
                    .copy_from(&admm_z_edge(cm, cfg, &v, &new_x, e));
            }
            let mut new_v = v;
            for (e, &(a, b)) in cm.graph().edges().iter().enumerate() {
                for k in 0..u {
                    new_v[e * u + k] += cfg.c * (new_x[a * u + k] - new_z[e * u + k]);
                    new_v[mu + e * u + k] += cfg.c * (new_x[b * u + k] - new_z[e * u + k]);
                }
            }
            state.x = new_x;
            state.duals = DualState::Admm { v: new_v, z: new_z };
            state.transmissions += sync_transmissions(OptimizerKind::Admm, cm, cfg);
        }
        Schedule::Asynchronous { seed } => {
            let i = activated_node(seed, state.k, cm.graph().n());
            let (agg, warm) = {
                let DualState::Admm { v, z } = &state.duals else {
                    panic!("state does not belong to an ADMM run")
                };
                (
                    admm_aggregate(cm, cfg, v, z, i),
                    state.x.rows(i * u, u).into_owned(),
                )
            };
            let xi = problem.local_x_update_cached(cache, i, &agg, Some(&warm))?;
            state.x.rows_mut(i * u, u).copy_from(&xi);
            let x = state.x.clone();
            let DualState::Admm { v, z } = &mut state.duals else {
                unreachable!()
            };
            for inc in cm.incident(i) {
                let e = inc.edge;
                let ze = admm_z_edge(cm, cfg, v, &x, e);
                z.rows_mut(e * u, u).copy_from(&ze);
                let (a, b) = cm.graph().edges()[e];
                for k in 0..u {
                    v[e * u + k] += cfg.c * (x[a * u + k] - ze[k]);
                    v[mu + e * u + k] += cfg.c * (x[b * u + k] - ze[k]);
                }
            }
            state.transmissions += async_transmissions(OptimizerKind::Admm, cm, cfg, i);
        }
    }
    state.k += 1;
    Ok(())
}

/// One dual-ascent round: per-node Lagrangian minimization, then the gradient
/// step `u += t (B x - b)` on the edge duals. Reports divergence when the
/// primal iterate blows past the configured bound.
pub fn dual_ascent_round(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    let cache = build_cache(OptimizerKind::DualAscent, problem, cm, cfg)?;
    let t = cfg
        .t
        .unwrap_or_else(|| default_dual_ascent_step(cm, problem));
    dual_ascent_round_cached(state, problem, cm, cfg, &cache, t)
}

pub(crate) fn dual_ascent_round_cached(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    cache: &LocalCache,
    t: f64,
) -> Result<()> {
    let u = cm.block();
    let linear_at = |u_vec: &DVector<f64>, i: usize| -> DVector<f64> {
        let mut lin = DVector::zeros(u);
        for inc in cm.incident(i) {
            lin.axpy(inc.sign, &u_vec.rows(inc.edge * u, u), 1.0);
        }
        lin
    };
    match cfg.schedule {
        Schedule::Synchronous => {
            let u_vec = match &state.duals {
                DualState::DualAscent { u_vec } => u_vec.clone(),
                _ => panic!("state does not belong to a dual ascent run"),
            };
            let mut new_x = DVector::zeros(cm.primal_dim());
            for i in 0..cm.graph().n() {
                let lin = linear_at(&u_vec, i);
                let warm = state.x.rows(i * u, u).into_owned();
                // argmin f_i(x) + lin'x  ==  local penalty form with
                // aggregate -lin and zero ridge.
                let xi = problem.local_x_update_cached(cache, i, &(-lin), Some(&warm))?;
                new_x.rows_mut(i * u, u).copy_from(&xi);
            }
            let mut new_u = u_vec;
            for (e, &(a, b)) in cm.graph().edges().iter().enumerate() {
                for k in 0..u {
                    new_u[e * u + k] += t * (new_x[a * u + k] - new_x[b * u + k]);
                }
            }
            state.x = new_x;
            state.duals = DualState::DualAscent { u_vec: new_u };
            state.transmissions += sync_transmissions(OptimizerKind::DualAscent, cm, cfg);
        }
        Schedule::Asynchronous { seed } => {
            let i = activated_node(seed, state.k, cm.graph().n());
            let (lin, warm) = {
                let DualState::DualAscent { u_vec } = &state.duals else {
                    panic!("state does not belong to a dual ascent run")
                };
                (linear_at(u_vec, i), state.x.rows(i * u, u).into_owned())
            };
            let xi = problem.local_x_update_cached(cache, i, &(-lin), Some(&warm))?;
            state.x.rows_mut(i * u, u).copy_from(&xi);
            let x = state.x.clone();
            let DualState::DualAscent { u_vec } = &mut state.duals else {
                unreachable!()
            };
            for inc in cm.incident(i) {
                let (a, b) = cm.graph().edges()[inc.edge];
                for k in 0..u {
                    u_vec[inc.edge * u + k] += t * (x[a * u + k] - x[b * u + k]);
                }
            }
            state.transmissions += async_transmissions(OptimizerKind::DualAscent, cm, cfg, i);
        }
    }
    state.k += 1;
    let norm = state.x.amax();
    if norm > cfg.divergence_bound {
        return Err(Error::Divergence {
            round: state.k,
            norm,
            bound: cfg.divergence_bound,
        });
    }
    Ok(())
}

/// Dispatch one round of the selected optimizer.
pub fn step_round(
    kind: OptimizerKind,
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    match kind {
        OptimizerKind::Pdmm => pdmm_round(state, problem, cm, cfg),
        OptimizerKind::AveragedPdmm => averaged_pdmm_round(state, problem, cm, cfg),
        OptimizerKind::Admm => admm_round(state, problem, cm, cfg),
        OptimizerKind::DualAscent => dual_ascent_round(state, problem, cm, cfg),
    }
}

/// How the dual variables start.
#[derive(Debug, Clone)]
pub enum DualInit {
    /// Draw from `N(0, variance)` per entry, optionally projected onto the
    /// convergent subspace.
    Sampled {
        variance: f64,
        mode: InitMode,
        seed: u64,
    },
    /// Exact vector, for controlled experiments.
    Explicit(DVector<f64>),
}

/// Stopping rule and bookkeeping switches for [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub max_rounds: usize,
    /// Relative primal error at which the run stops.
    pub primal_tol: f64,
    /// Keep the primal state of every round on the trace (what an
    /// eavesdropper of all channels sees).
    pub record_states: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_rounds: 10_000,
            primal_tol: 1e-12,
            record_states: false,
        }
    }
}

/// Run one optimizer until the relative primal error reaches `primal_tol` or
/// `max_rounds` is exhausted, recording per round the primal squared error,
/// the convergent-dual error (PDMM on strictly convex problems), the
/// non-convergent dual squared norm and cumulative transmissions.
pub fn run(
    kind: OptimizerKind,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    basis: &SubspaceBasis,
    cfg: &StepConfig,
    dual_init: &DualInit,
    opts: &RunOptions,
) -> Result<Trace> {
    cfg.validate()?;
    if problem.n_nodes() != cm.graph().n() || problem.block() != cm.block() {
        return Err(Error::InvalidConfig(format!(
            "problem ({} nodes, u = {}) does not match graph ({} nodes, u = {})",
            problem.n_nodes(),
            problem.block(),
            cm.graph().n(),
            cm.block()
        )));
    }
    if basis.kind().subspace_family() != kind.subspace_family() {
        return Err(Error::InvalidConfig(format!(
            "subspace basis built for {} used with {}",
            basis.kind().as_str(),
            kind.as_str()
        )));
    }

    let (x_star, subgrad) = problem.centralized_solution()?;
    let lambda_star = if kind == OptimizerKind::Pdmm && problem.is_strictly_convex() {
        Some(crate::subspace::optimal_dual(cm, &subgrad, &x_star, cfg.c)?)
    } else {
        None
    };

    let (dual0, variance, mode, dual_seed) = match dual_init {
        DualInit::Sampled {
            variance,
            mode,
            seed,
        } => (
            basis.sample_dual_init(*variance, *seed, *mode),
            Some(*variance),
            Some(*mode),
            Some(*seed),
        ),
        DualInit::Explicit(v) => (v.clone(), None, None, None),
    };
    let mut state = OptimizerState::new(kind, cm, dual0)?;
    let cache = build_cache(kind, problem, cm, cfg)?;
    let t = cfg
        .t
        .unwrap_or_else(|| default_dual_ascent_step(cm, problem));

    let mut trace = Trace::new(TraceMeta {
        optimizer: kind,
        problem: problem.kind(),
        schedule: cfg.schedule,
        variance,
        mode,
        dual_seed,
        data_seed: problem.data_seed(),
        x_star_norm_sq: x_star.norm_squared(),
        config_hash: None,
    });
    if opts.record_states {
        trace.states = Some(vec![state.x.clone()]);
    }
    record(&mut trace, &state, &x_star, lambda_star.as_ref(), basis);

    for _ in 0..opts.max_rounds {
        match kind {
            OptimizerKind::Pdmm => pdmm_round_cached(&mut state, problem, cm, cfg, &cache)?,
            OptimizerKind::AveragedPdmm => {
                averaged_pdmm_round_cached(&mut state, problem, cm, cfg, &cache)?
            }
            OptimizerKind::Admm => admm_round_cached(&mut state, problem, cm, cfg, &cache)?,
            OptimizerKind::DualAscent => {
                dual_ascent_round_cached(&mut state, problem, cm, cfg, &cache, t)?
            }
        }
        if let Some(states) = &mut trace.states {
            states.push(state.x.clone());
        }
        record(&mut trace, &state, &x_star, lambda_star.as_ref(), basis);
        let rec = *trace.last().expect("just recorded");
        if trace.rel_primal_err(&rec) <= opts.primal_tol {
            break;
        }
    }
    Ok(trace)
}

fn record(
    trace: &mut Trace,
    state: &OptimizerState,
    x_star: &DVector<f64>,
    lambda_star: Option<&DVector<f64>>,
    basis: &SubspaceBasis,
) {
    let dual = state.duals.primary();
    let (conv_err, nonconv) = dual_split_norms(basis, dual, lambda_star);
    trace.push(TraceRecord {
        round: state.k,
        transmissions: state.transmissions,
        primal_err_sq: (&state.x - x_star).norm_squared(),
        conv_dual_err_sq: conv_err,
        nonconv_dual_norm_sq: nonconv,
    });
}

/// Convergent-error and non-convergent squared norms of a dual vector.
/// `|v|^2 - |B'v|^2` cancels catastrophically when the non-convergent part
/// is near zero (in-subspace initializations), so that regime falls back to
/// the explicit residual; it comes free whenever the reconstruction is
/// needed for the convergent error anyway.
pub(crate) fn dual_split_norms(
    basis: &SubspaceBasis,
    dual: &DVector<f64>,
    lambda_star: Option<&DVector<f64>>,
) -> (Option<f64>, f64) {
    let coeffs = basis.basis().tr_mul(dual);
    let norm_sq = dual.norm_squared();
    let fast = (norm_sq - coeffs.norm_squared()).max(0.0);
    if lambda_star.is_none() && fast > 1e-12 * norm_sq {
        return (None, fast);
    }
    let recon = basis.basis() * &coeffs;
    let nonconv = (dual - &recon).norm_squared();
    (lambda_star.map(|ls| (recon - ls).norm_squared()), nonconv)
}
