//! Structural checks against independent oracles: subspace ranks and
//! projections, node-local vs stacked-matrix round equivalence, dual
//! decomposition identities, and transmission accounting.

mod common;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use subspace_perturb::graph::{build_constraint_matrices, generate_geometric_graph, Graph};
use subspace_perturb::optimizers::{
    self, stacked, DualState, OptimizerKind, OptimizerState, Schedule, StepConfig,
};
use subspace_perturb::privacy::{honest_components, AdversaryModel};
use subspace_perturb::problems::{ProblemInstance, ProblemKind, ProblemTemplate};
use subspace_perturb::subspace::{convergent_basis, sample_gaussian};

fn triangle_cm() -> subspace_perturb::ConstraintMatrices {
    let g = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
    build_constraint_matrices(&g, 1)
}

fn concat_pdmm(cm: &subspace_perturb::ConstraintMatrices) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(cm.dual_dim(), 2 * cm.primal_dim());
    a.columns_mut(0, cm.primal_dim()).copy_from(&cm.c_mat);
    a.columns_mut(cm.primal_dim(), cm.primal_dim())
        .copy_from(&cm.pc_mat);
    a
}

#[test]
fn subspace_ranks_match_elimination_oracle() {
    let cm = triangle_cm();
    // PDMM: [C PC] on the triangle spans 5 of 6 dimensions.
    let pdmm = convergent_basis(&cm, OptimizerKind::Pdmm);
    assert_eq!(
        pdmm.rank(),
        common::rank_by_elimination(&concat_pdmm(&cm), 1e-10)
    );
    assert_eq!((pdmm.ambient_dim(), pdmm.rank()), (6, 5));
    // ADMM: [M W].
    let mut mw = DMatrix::zeros(cm.dual_dim(), cm.primal_dim() + cm.edge_dim());
    mw.columns_mut(0, cm.primal_dim()).copy_from(&cm.m_mat);
    mw.columns_mut(cm.primal_dim(), cm.edge_dim())
        .copy_from(&cm.w_mat);
    let admm = convergent_basis(&cm, OptimizerKind::Admm);
    assert_eq!(admm.rank(), common::rank_by_elimination(&mw, 1e-10));
    assert_eq!((admm.ambient_dim(), admm.rank()), (6, 5));
    // Dual ascent: span(B) has rank n - 1; the cycle space is m - n + 1.
    let dual = convergent_basis(&cm, OptimizerKind::DualAscent);
    assert_eq!(dual.rank(), common::rank_by_elimination(&cm.b_mat, 1e-10));
    assert_eq!(dual.rank(), 2);
    assert_eq!(dual.nonconv_dim(), cm.graph().m() - cm.graph().n() + 1);
}

#[test]
fn incidence_rank_scales_with_block_size() {
    // rank(B) = (n-1) u on connected graphs.
    let g = generate_geometric_graph(8, 0.8, 5).unwrap();
    for u in [1, 2, 3] {
        let cm = build_constraint_matrices(&g, u);
        assert_eq!(
            common::rank_by_elimination(&cm.b_mat, 1e-10),
            (g.n() - 1) * u
        );
    }
}

#[test]
fn projection_agrees_with_gram_schmidt_oracle() {
    let cm = triangle_cm();
    let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
    let oracle = common::gram_schmidt_basis(&concat_pdmm(&cm), 1e-10);
    assert_eq!(oracle.ncols(), basis.rank());
    let v = DVector::from_element(6, 1.0);
    let (conv, nonconv) = basis.project(&v).unwrap();
    let conv_oracle = common::project_onto(&oracle, &v);
    assert!((conv - &conv_oracle).amax() < 1e-12);
    assert!((nonconv - (v - conv_oracle)).amax() < 1e-12);
}

#[test]
fn pdmm_nonconv_dim_exceeds_cycle_space_bound() {
    // dim(perp) = 2mu - rank([C PC]) >= u (m - n + 1) on connected graphs.
    for (n, seed) in [(8usize, 3u64), (12, 9), (20, 7)] {
        let g = generate_geometric_graph(n, 2.0 * (n as f64).ln() / n as f64, seed).unwrap();
        for u in [1usize, 2] {
            let cm = build_constraint_matrices(&g, u);
            let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
            assert_eq!(basis.nonconv_dim(), cm.dual_dim() - basis.rank());
            let cycle = u * (g.m() + 1 - g.n());
            assert!(basis.nonconv_dim() >= cycle.max(1));
        }
    }
}

fn consensus_instance(n: usize, u: usize, seed: u64) -> ProblemInstance {
    ProblemTemplate {
        kind: ProblemKind::Consensus,
        u,
        rows_per_node: 1,
        alpha: 0.1,
        data_variance: 1.0,
    }
    .instantiate(n, seed)
    .unwrap()
}

fn ls_instance(n: usize, u: usize, rows: usize, seed: u64) -> ProblemInstance {
    ProblemTemplate {
        kind: ProblemKind::LeastSquares,
        u,
        rows_per_node: rows,
        alpha: 0.1,
        data_variance: 1.0,
    }
    .instantiate(n, seed)
    .unwrap()
}

fn dual_dims_match(a: &DualState, b: &DualState, tol: f64) -> bool {
    match (a, b) {
        (DualState::Pdmm { lambda: x }, DualState::Pdmm { lambda: y }) => (x - y).amax() <= tol,
        (DualState::Admm { v: xv, z: xz }, DualState::Admm { v: yv, z: yz }) => {
            (xv - yv).amax() <= tol && (xz - yz).amax() <= tol
        }
        (DualState::DualAscent { u_vec: x }, DualState::DualAscent { u_vec: y }) => {
            (x - y).amax() <= tol
        }
        _ => false,
    }
}

/// Node-local and stacked engines, same state, several rounds, per-round
/// agreement at machine precision.
fn equivalence_case(kind: OptimizerKind, problem: &ProblemInstance, u: usize, tol: f64) {
    let g = generate_geometric_graph(problem.n_nodes(), 0.9, 31).unwrap();
    let cm = build_constraint_matrices(&g, u);
    let dual0 = sample_gaussian(optimizers::dual_dim(kind, &cm), 4.0, 77);
    let cfg = StepConfig::default();
    let mut local = OptimizerState::new(kind, &cm, dual0.clone()).unwrap();
    let mut global = OptimizerState::new(kind, &cm, dual0).unwrap();
    for round in 0..5 {
        optimizers::step_round(kind, &mut local, problem, &cm, &cfg).unwrap();
        stacked::step_round_stacked(kind, &mut global, problem, &cm, &cfg).unwrap();
        let dx = (&local.x - &global.x).amax();
        assert!(dx <= tol, "{:?} round {round}: primal gap {dx}", kind);
        assert!(
            dual_dims_match(&local.duals, &global.duals, tol),
            "{:?} round {round}: dual gap",
            kind
        );
    }
}

#[test]
fn node_local_matches_stacked_consensus() {
    let problem = consensus_instance(7, 1, 5);
    for kind in [
        OptimizerKind::Pdmm,
        OptimizerKind::AveragedPdmm,
        OptimizerKind::Admm,
        OptimizerKind::DualAscent,
    ] {
        equivalence_case(kind, &problem, 1, 1e-12);
    }
}

#[test]
fn node_local_matches_stacked_least_squares() {
    let problem = ls_instance(7, 2, 4, 6);
    for kind in [
        OptimizerKind::Pdmm,
        OptimizerKind::AveragedPdmm,
        OptimizerKind::Admm,
        OptimizerKind::DualAscent,
    ] {
        equivalence_case(kind, &problem, 2, 1e-12);
    }
}

#[test]
fn node_local_matches_stacked_lasso() {
    // The l1 block minimizers stop at an inner tolerance of 1e-12, so the
    // two routes agree to just above it rather than at machine precision.
    let problem = ProblemTemplate {
        kind: ProblemKind::Lasso,
        u: 4,
        rows_per_node: 2,
        alpha: 0.2,
        data_variance: 1.0,
    }
    .instantiate(7, 8)
    .unwrap();
    for kind in [
        OptimizerKind::Pdmm,
        OptimizerKind::AveragedPdmm,
        OptimizerKind::Admm,
    ] {
        equivalence_case(kind, &problem, 4, 1e-10);
    }
}

#[test]
fn pdmm_first_iterate_hand_value() {
    // Path of two nodes, s = (1, 3), c = 0.5, zero duals: the first update
    // is (s_i + 0) / (1 + c).
    let g = Graph::from_edges(2, [(0, 1)]).unwrap();
    let cm = build_constraint_matrices(&g, 1);
    let problem = ProblemInstance::consensus(vec![
        DVector::from_element(1, 1.0),
        DVector::from_element(1, 3.0),
    ])
    .unwrap();
    let cfg = StepConfig {
        c: 0.5,
        ..Default::default()
    };
    let mut state = OptimizerState::new(OptimizerKind::Pdmm, &cm, DVector::zeros(2)).unwrap();
    optimizers::pdmm_round(&mut state, &problem, &cm, &cfg).unwrap();
    assert!((state.x[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((state.x[1] - 2.0).abs() < 1e-15);
}

#[test]
fn pdmm_dual_decomposition_identity() {
    // (I - proj) lambda^(k) = P^k (I - proj) lambda^(0): the non-convergent
    // component is only permuted, never changed.
    let g = generate_geometric_graph(8, 0.7, 11).unwrap();
    let cm = build_constraint_matrices(&g, 1);
    let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
    let problem = consensus_instance(8, 1, 3);
    let dual0 = sample_gaussian(cm.dual_dim(), 1e6, 21);
    let (_, w0) = basis.project(&dual0).unwrap();
    let cfg = StepConfig::default();
    let mut state = OptimizerState::new(OptimizerKind::Pdmm, &cm, dual0).unwrap();
    let scale = w0.norm();
    for k in 1..=60 {
        optimizers::pdmm_round(&mut state, &problem, &cm, &cfg).unwrap();
        let DualState::Pdmm { lambda } = &state.duals else {
            unreachable!()
        };
        let (_, wk) = basis.project(lambda).unwrap();
        let expect = if k % 2 == 0 {
            w0.clone()
        } else {
            cm.swap_halves(&w0)
        };
        assert!(
            (wk - expect).norm() <= 1e-10 * scale,
            "round {k}: permuted identity broken"
        );
    }
}

#[test]
fn admm_nonconvergent_component_is_fixed() {
    let g = generate_geometric_graph(8, 0.7, 11).unwrap();
    let cm = build_constraint_matrices(&g, 1);
    let basis = convergent_basis(&cm, OptimizerKind::Admm);
    let problem = consensus_instance(8, 1, 3);
    let dual0 = sample_gaussian(cm.dual_dim(), 1e6, 23);
    let (_, w0) = basis.project(&dual0).unwrap();
    let cfg = StepConfig::default();
    let mut state = OptimizerState::new(OptimizerKind::Admm, &cm, dual0).unwrap();
    for _ in 0..60 {
        optimizers::admm_round(&mut state, &problem, &cm, &cfg).unwrap();
        let DualState::Admm { v, .. } = &state.duals else {
            unreachable!()
        };
        let (_, wk) = basis.project(v).unwrap();
        assert!((wk - &w0).norm() <= 1e-10 * w0.norm());
    }
}

#[test]
fn dual_ascent_cycle_component_is_fixed() {
    // The update adds Bx, which lies in span(B); the null(B') component of
    // the dual never moves.
    let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)]).unwrap();
    let cm = build_constraint_matrices(&g, 1);
    let basis = convergent_basis(&cm, OptimizerKind::DualAscent);
    assert!(basis.nonconv_dim() >= 1);
    let problem = consensus_instance(4, 1, 9);
    let dual0 = sample_gaussian(cm.edge_dim(), 100.0, 5);
    let (_, w0) = basis.project(&dual0).unwrap();
    let cfg = StepConfig::default();
    let mut state = OptimizerState::new(OptimizerKind::DualAscent, &cm, dual0).unwrap();
    for _ in 0..80 {
        optimizers::dual_ascent_round(&mut state, &problem, &cm, &cfg).unwrap();
        let DualState::DualAscent { u_vec } = &state.duals else {
            unreachable!()
        };
        let (_, wk) = basis.project(u_vec).unwrap();
        assert!((wk - &w0).norm() <= 1e-10 * w0.norm().max(1.0));
    }
}

#[test]
fn x_update_ignores_nonconvergent_dual_component() {
    // Two PDMM runs whose initializations differ by a vector in the
    // non-convergent subspace produce the same primal trajectory.
    let g = generate_geometric_graph(8, 0.7, 11).unwrap();
    let cm = build_constraint_matrices(&g, 1);
    let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
    let problem = consensus_instance(8, 1, 13);
    let base = sample_gaussian(cm.dual_dim(), 1.0, 31);
    let (_, mut w) = basis
        .project(&sample_gaussian(cm.dual_dim(), 1.0, 32))
        .unwrap();
    w *= 1e3 / w.norm();
    let cfg = StepConfig::default();
    let mut a = OptimizerState::new(OptimizerKind::Pdmm, &cm, base.clone()).unwrap();
    let mut b = OptimizerState::new(OptimizerKind::Pdmm, &cm, base + w).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..500 {
        optimizers::pdmm_round(&mut a, &problem, &cm, &cfg).unwrap();
        optimizers::pdmm_round(&mut b, &problem, &cm, &cfg).unwrap();
        worst = worst.max((&a.x - &b.x).amax());
    }
    assert!(worst <= 1e-8, "max primal deviation {worst}");
}

#[test]
fn async_rounds_are_deterministic_and_counted_per_degree() {
    let g = generate_geometric_graph(6, 0.8, 2).unwrap();
    let cm = build_constraint_matrices(&g, 1);
    let problem = consensus_instance(6, 1, 1);
    let cfg = StepConfig {
        schedule: Schedule::Asynchronous { seed: 5 },
        ..Default::default()
    };
    let dual0 = sample_gaussian(cm.dual_dim(), 1.0, 3);
    let mut a = OptimizerState::new(OptimizerKind::Pdmm, &cm, dual0.clone()).unwrap();
    let mut b = OptimizerState::new(OptimizerKind::Pdmm, &cm, dual0).unwrap();
    for _ in 0..40 {
        optimizers::pdmm_round(&mut a, &problem, &cm, &cfg).unwrap();
    }
    for _ in 0..40 {
        optimizers::pdmm_round(&mut b, &problem, &cm, &cfg).unwrap();
    }
    assert_eq!(a.x, b.x);
    assert_eq!(a.transmissions, b.transmissions);
    // Each activation of node i costs d_i packages; over many rounds the
    // total is bounded by the degree extremes.
    let dmin = (0..6).map(|i| g.degree(i)).min().unwrap() as u64;
    let dmax = (0..6).map(|i| g.degree(i)).max().unwrap() as u64;
    assert!(a.transmissions >= 40 * dmin && a.transmissions <= 40 * dmax);
}

#[test]
fn transmission_accounting_modes() {
    let g = generate_geometric_graph(6, 0.8, 2).unwrap();
    let cm = build_constraint_matrices(&g, 1);
    let problem = consensus_instance(6, 1, 1);
    let dual0 = DVector::zeros(cm.dual_dim());

    let per_neighbor = StepConfig::default();
    let mut state = OptimizerState::new(OptimizerKind::Pdmm, &cm, dual0.clone()).unwrap();
    optimizers::pdmm_round(&mut state, &problem, &cm, &per_neighbor).unwrap();
    assert_eq!(state.transmissions, g.degree_sum() as u64);

    let broadcast_once = StepConfig {
        broadcast_counts_once: true,
        ..Default::default()
    };
    let mut state = OptimizerState::new(OptimizerKind::Pdmm, &cm, dual0.clone()).unwrap();
    optimizers::pdmm_round(&mut state, &problem, &cm, &broadcast_once).unwrap();
    assert_eq!(state.transmissions, g.n() as u64);

    // ADMM is pairwise; the broadcast discount never applies.
    let mut state = OptimizerState::new(OptimizerKind::Admm, &cm, dual0).unwrap();
    optimizers::admm_round(&mut state, &problem, &cm, &broadcast_once).unwrap();
    assert_eq!(state.transmissions, g.degree_sum() as u64);
}

#[test]
fn honest_components_match_bfs_oracle_on_seeded_adversaries() {
    let g = generate_geometric_graph(20, 2.0 * (20.0f64).ln() / 20.0, 7).unwrap();
    for seed in 0..100u64 {
        let mut rng = seed;
        let mut next = move || {
            rng = rng
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (rng >> 33) as usize
        };
        let count = next() % (g.n() - 1);
        let corrupted: BTreeSet<usize> = (0..count).map(|_| next() % g.n()).collect();
        let adv = AdversaryModel {
            corrupted: corrupted.clone(),
            ..Default::default()
        };
        assert_eq!(
            honest_components(&g, &adv),
            common::bfs_honest_components(g.n(), g.edges(), &corrupted),
            "seed {seed}"
        );
    }
}
