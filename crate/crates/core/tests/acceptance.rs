//! Acceptance suite: one test per shipping criterion, each printing a
//! PASS line with its measured margins (visible with `--nocapture`).
//!
//! The fixture is the seeded 20-node geometric graph with the connectivity
//! radius `r^2 = 2 ln(n) / n`, penalty `c = 0.4`, averaging weight
//! `theta = 0.5`, and unit-variance Gaussian private data.

mod common;

use std::collections::BTreeSet;

use subspace_perturb::graph::{
    build_constraint_matrices, generate_geometric_graph, ConstraintMatrices, Graph,
};
use subspace_perturb::harness::fit_tail_slope;
use subspace_perturb::optimizers::{
    self, run, stacked, DualInit, DualState, OptimizerKind, OptimizerState, RunOptions, StepConfig,
};
use subspace_perturb::privacy::{
    dp_baseline_consensus, eavesdrop_reconstruct, honest_components, leakage_experiment,
    prop2_bound, steady_state_error, AdversaryModel, LeakageOptions,
};
use subspace_perturb::problems::{ProblemInstance, ProblemKind, ProblemTemplate};
use subspace_perturb::subspace::{convergent_basis, sample_gaussian, InitMode};
use subspace_perturb::trace::Trace;

const GRAPH_SEED: u64 = 7;
const DUAL_SEED: u64 = 5;
const VARIANCES: [f64; 3] = [1e2, 1e4, 1e6];

fn paper_graph() -> Graph {
    let n = 20;
    generate_geometric_graph(n, 2.0 * (n as f64).ln() / n as f64, GRAPH_SEED).unwrap()
}

fn consensus_template() -> ProblemTemplate {
    ProblemTemplate {
        kind: ProblemKind::Consensus,
        u: 1,
        rows_per_node: 1,
        alpha: 0.1,
        data_variance: 1.0,
    }
}

fn ls_template() -> ProblemTemplate {
    ProblemTemplate {
        kind: ProblemKind::LeastSquares,
        u: 3,
        rows_per_node: 5,
        alpha: 0.1,
        data_variance: 1.0,
    }
}

fn lasso_template() -> ProblemTemplate {
    // Underdetermined: 20 observations total against 21 unknowns.
    ProblemTemplate {
        kind: ProblemKind::Lasso,
        u: 21,
        rows_per_node: 1,
        alpha: 0.1,
        data_variance: 1.0,
    }
}

fn perturbed_init(variance: f64) -> DualInit {
    DualInit::Sampled {
        variance,
        mode: InitMode::Full,
        seed: DUAL_SEED,
    }
}

fn strictly_convex_cells() -> Vec<(&'static str, ProblemTemplate, u64, OptimizerKind)> {
    vec![
        (
            "consensus/pdmm",
            consensus_template(),
            100,
            OptimizerKind::Pdmm,
        ),
        (
            "consensus/admm",
            consensus_template(),
            100,
            OptimizerKind::Admm,
        ),
        (
            "least_squares/pdmm",
            ls_template(),
            101,
            OptimizerKind::Pdmm,
        ),
        (
            "least_squares/admm",
            ls_template(),
            101,
            OptimizerKind::Admm,
        ),
    ]
}

fn run_cell(
    template: &ProblemTemplate,
    data_seed: u64,
    kind: OptimizerKind,
    variance: f64,
    opts: &RunOptions,
) -> (Trace, ConstraintMatrices, ProblemInstance) {
    let g = paper_graph();
    let cm = build_constraint_matrices(&g, template.u);
    let problem = template.instantiate(g.n(), data_seed).unwrap();
    let basis = convergent_basis(&cm, kind);
    let trace = run(
        kind,
        &problem,
        &cm,
        &basis,
        &StepConfig::default(),
        &perturbed_init(variance),
        opts,
    )
    .unwrap();
    (trace, cm, problem)
}

#[test]
fn criterion_1_correctness_against_centralized_oracles() {
    let opts = RunOptions {
        max_rounds: 10_000,
        primal_tol: 1e-11,
        record_states: false,
    };
    let mut details = String::new();
    for (label, template, data_seed, kind) in strictly_convex_cells() {
        let (trace, _, _) = run_cell(&template, data_seed, kind, 1e6, &opts);
        let rel = trace.final_rel_err();
        let rounds = trace.records.len() - 1;
        assert!(rel < 1e-10, "{label}: relative error {rel}");
        assert!(rounds <= 10_000);
        details.push_str(&format!("{label} {rel:.2e}@{rounds} "));
    }
    // Averaged PDMM on the underdetermined LASSO against the proximal-
    // gradient oracle.
    let lasso_opts = RunOptions {
        max_rounds: 10_000,
        primal_tol: 1e-7,
        record_states: false,
    };
    let (trace, _, _) = run_cell(
        &lasso_template(),
        100,
        OptimizerKind::AveragedPdmm,
        1e6,
        &lasso_opts,
    );
    let rel = trace.final_rel_err();
    assert!(rel < 1e-6, "lasso/averaged_pdmm: relative error {rel}");
    details.push_str(&format!(
        "lasso/averaged_pdmm {rel:.2e}@{}",
        trace.records.len() - 1
    ));
    println!("[acceptance] criterion 1 (oracle correctness): PASS — {details}");
}

#[test]
fn criterion_2_nonconvergent_component_is_flat_and_permuted() {
    let opts = RunOptions {
        max_rounds: 10_000,
        primal_tol: 1e-11,
        record_states: false,
    };
    let mut worst_flat = 0.0f64;
    for (label, template, data_seed, kind) in strictly_convex_cells() {
        let (trace, _, _) = run_cell(&template, data_seed, kind, 1e6, &opts);
        let first = trace.records[0].nonconv_dual_norm_sq;
        for r in &trace.records {
            let dev = (r.nonconv_dual_norm_sq - first).abs() / first;
            assert!(
                dev < 1e-9,
                "{label}: non-convergent norm drifted by {dev:e}"
            );
            worst_flat = worst_flat.max(dev);
        }
    }

    // PDMM's exact permutation identity, checked per round over the full
    // consensus and least squares runs.
    let mut worst_perm = 0.0f64;
    for (template, data_seed) in [(consensus_template(), 100u64), (ls_template(), 101)] {
        let g = paper_graph();
        let cm = build_constraint_matrices(&g, template.u);
        let problem = template.instantiate(g.n(), data_seed).unwrap();
        let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
        let dual0 = basis.sample_dual_init(1e6, DUAL_SEED, InitMode::Full);
        let (_, w0) = basis.project(&dual0).unwrap();
        let scale = w0.norm();
        let cfg = StepConfig::default();
        let mut state = OptimizerState::new(OptimizerKind::Pdmm, &cm, dual0).unwrap();
        for k in 1..=1000 {
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
            let dev = (wk - expect).norm() / scale;
            assert!(
                dev < 1e-10,
                "round {k}: permutation identity off by {dev:e}"
            );
            worst_perm = worst_perm.max(dev);
        }
    }
    println!(
        "[acceptance] criterion 2 (flat non-convergent dual): PASS — max relative drift {worst_flat:.2e}, max permutation residual {worst_perm:.2e}"
    );
}

#[test]
fn criterion_3_x_trajectory_ignores_nullspace_offsets() {
    let g = paper_graph();
    let cm = build_constraint_matrices(&g, 1);
    let problem = consensus_template().instantiate(g.n(), 100).unwrap();
    let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
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
    assert!(worst <= 1e-8, "max deviation {worst:e}");
    println!("[acceptance] criterion 3 (x-update independence): PASS — max deviation {worst:.2e} over 500 rounds");
}

#[test]
fn criterion_4_convergence_rate_is_privacy_level_invariant() {
    let g = paper_graph();
    let template = ls_template();
    let cm = build_constraint_matrices(&g, template.u);
    let problem = template.instantiate(g.n(), 101).unwrap();
    let cfg = StepConfig::default();
    let opts = RunOptions {
        max_rounds: 10_000,
        primal_tol: 1e-10,
        record_states: false,
    };
    let mut details = String::new();
    for kind in [
        OptimizerKind::DualAscent,
        OptimizerKind::Admm,
        OptimizerKind::Pdmm,
    ] {
        let basis = convergent_basis(&cm, kind);
        let mut slopes = Vec::new();
        let mut offsets = Vec::new();
        for variance in VARIANCES {
            let trace = run(
                kind,
                &problem,
                &cm,
                &basis,
                &cfg,
                &perturbed_init(variance),
                &opts,
            )
            .unwrap();
            slopes.push(fit_tail_slope(&trace, 0.5).unwrap());
            offsets.push(trace.records[1].primal_err_sq);
        }
        let max = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = (max - min).abs() / min.abs();
        assert!(spread < 0.05, "{kind:?}: slope spread {spread:.4}");
        assert!(
            offsets[0] < offsets[1] && offsets[1] < offsets[2],
            "{kind:?}: offsets not ordered by variance: {offsets:?}"
        );
        assert!(
            slopes.iter().all(|s| *s < 0.0),
            "{kind:?}: slopes must be negative"
        );
        details.push_str(&format!("{} spread {:.2}% ", kind.as_str(), 100.0 * spread));
    }
    println!("[acceptance] criterion 4 (rate invariance): PASS — {details}");
}

#[test]
fn criterion_5_additive_noise_bound_values() {
    let ten = prop2_bound(1.0, 10.0);
    let hundred = prop2_bound(1.0, 100.0);
    assert!((ten - 0.0688).abs() <= 1e-4, "got {ten}");
    assert!((hundred - 0.00718).abs() <= 1e-5, "got {hundred}");
    println!(
        "[acceptance] criterion 5 (additive-noise bound): PASS — {ten:.5} bits at 10x, {hundred:.6} bits at 100x"
    );
}

#[test]
fn criterion_6_noise_on_state_trades_accuracy_but_subspace_noise_does_not() {
    let g = paper_graph();
    let cm = build_constraint_matrices(&g, 1);
    let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
    let template = consensus_template();
    let cfg = StepConfig::default();

    let mut dp_means = Vec::new();
    for variance in [0.0, 1e2, 1e4] {
        let mut mean = 0.0;
        for seed in 0..20u64 {
            let problem = template.instantiate(g.n(), 1000 + seed).unwrap();
            let trace =
                dp_baseline_consensus(&problem, &cm, &basis, &cfg, variance, 2000 + seed, 600)
                    .unwrap();
            mean += steady_state_error(&trace) / 20.0;
        }
        dp_means.push(mean);
    }
    assert!(
        dp_means[0] < dp_means[1] && dp_means[1] < dp_means[2],
        "noise-on-state steady errors not monotone: {dp_means:?}"
    );

    let problem = template.instantiate(g.n(), 1000).unwrap();
    let opts = RunOptions {
        max_rounds: 600,
        primal_tol: 0.0,
        record_states: false,
    };
    let steady: Vec<f64> = VARIANCES
        .iter()
        .map(|&variance| {
            let trace = run(
                OptimizerKind::Pdmm,
                &problem,
                &cm,
                &basis,
                &cfg,
                &perturbed_init(variance),
                &opts,
            )
            .unwrap();
            steady_state_error(&trace)
        })
        .collect();
    let spread = steady.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - steady.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread <= 1e-10, "subspace steady errors spread {spread:e}");
    println!(
        "[acceptance] criterion 6 (noise trade-off contrast): PASS — state-noise steady errors {dp_means:?} vs subspace spread {spread:.2e}"
    );
}

#[test]
fn criterion_7_leakage_curves_respect_the_partial_sum_bound() {
    let n = 8;
    let g = generate_geometric_graph(n, 2.0 * (n as f64).ln() / n as f64, 3).unwrap();
    let cm = build_constraint_matrices(&g, 1);
    let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
    let template = consensus_template();
    let cfg = StepConfig::default();
    let adv = AdversaryModel::default();
    let opts = |variance: f64| LeakageOptions {
        trials: 10_000,
        rounds: 12,
        variance,
        mode: InitMode::Full,
        k_nn: 3,
        seed: 9,
        condition16_variance_threshold: 100.0,
    };

    let nonprivate = leakage_experiment(
        &template,
        OptimizerKind::Pdmm,
        &cm,
        &basis,
        &cfg,
        &adv,
        &opts(0.0),
    )
    .unwrap();
    let mut min_iter1 = f64::INFINITY;
    for node in &nonprivate.nodes {
        min_iter1 = min_iter1.min(node.normalized_mi[0]);
        assert!(
            node.normalized_mi[0] >= 0.9,
            "node {}: non-private iteration-1 normalized MI {}",
            node.node,
            node.normalized_mi[0]
        );
    }

    let private = leakage_experiment(
        &template,
        OptimizerKind::Pdmm,
        &cm,
        &basis,
        &cfg,
        &adv,
        &opts(1e6),
    )
    .unwrap();
    let mut worst_margin = f64::NEG_INFINITY;
    for node in &private.nodes {
        for (k, nmi) in node.normalized_mi.iter().enumerate() {
            let margin = nmi - node.normalized_lower_bound;
            worst_margin = worst_margin.max(margin);
            assert!(
                *nmi <= node.normalized_lower_bound + 0.05,
                "node {} iteration {}: normalized MI {nmi} vs bound {}",
                node.node,
                k + 1,
                node.normalized_lower_bound
            );
        }
        assert!(node.condition16_satisfied);
    }
    println!(
        "[acceptance] criterion 7 (leakage curves, n={n}, 1e4 trials): PASS — non-private iteration-1 min {min_iter1:.3}, perturbed worst margin to bound {worst_margin:+.4}"
    );
}

#[test]
fn criterion_8_structural_oracles() {
    // Node-local vs stacked rounds for all four optimizers at machine
    // precision, on consensus and least squares.
    let g = generate_geometric_graph(7, 0.9, 31).unwrap();
    let kinds = [
        OptimizerKind::Pdmm,
        OptimizerKind::AveragedPdmm,
        OptimizerKind::Admm,
        OptimizerKind::DualAscent,
    ];
    let mut worst_gap = 0.0f64;
    for (template, u, data_seed) in [(consensus_template(), 1usize, 5u64), (ls_template(), 3, 6)] {
        let template = ProblemTemplate { u, ..template };
        let cm = build_constraint_matrices(&g, u);
        let problem = template.instantiate(g.n(), data_seed).unwrap();
        let cfg = StepConfig::default();
        for kind in kinds {
            let dual0 = sample_gaussian(optimizers::dual_dim(kind, &cm), 4.0, 77);
            let mut local = OptimizerState::new(kind, &cm, dual0.clone()).unwrap();
            let mut global = OptimizerState::new(kind, &cm, dual0).unwrap();
            for _ in 0..5 {
                optimizers::step_round(kind, &mut local, &problem, &cm, &cfg).unwrap();
                stacked::step_round_stacked(kind, &mut global, &problem, &cm, &cfg).unwrap();
                let gap = (&local.x - &global.x).amax();
                assert!(gap <= 1e-12, "{kind:?}: gap {gap:e}");
                worst_gap = worst_gap.max(gap);
            }
        }
    }

    // Subspace ranks on the triangle fixtures.
    let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
    let cm = build_constraint_matrices(&tri, 1);
    for (kind, ambient, rank) in [
        (OptimizerKind::Pdmm, 6, 5),
        (OptimizerKind::Admm, 6, 5),
        (OptimizerKind::DualAscent, 3, 2),
    ] {
        let basis = convergent_basis(&cm, kind);
        assert_eq!(
            (basis.ambient_dim(), basis.rank()),
            (ambient, rank),
            "{kind:?}"
        );
    }

    // Honest components against the BFS oracle over 100 seeded adversaries.
    let g20 = paper_graph();
    for seed in 0..100u64 {
        let mut rng = seed;
        let mut next = move || {
            rng = rng
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (rng >> 33) as usize
        };
        let count = next() % (g20.n() - 1);
        let corrupted: BTreeSet<usize> = (0..count).map(|_| next() % g20.n()).collect();
        let adv = AdversaryModel {
            corrupted: corrupted.clone(),
            ..Default::default()
        };
        assert_eq!(
            honest_components(&g20, &adv),
            common::bfs_honest_components(g20.n(), g20.edges(), &corrupted),
            "adversary seed {seed}"
        );
    }
    println!(
        "[acceptance] criterion 8 (structural oracles): PASS — max engine gap {worst_gap:.2e}, ranks 5/6 5/6 2/3, 100 adversary sets"
    );
}

#[test]
fn criterion_9_eavesdropper_needs_the_initialization_secret() {
    let g = paper_graph();
    let cm = build_constraint_matrices(&g, 1);
    let basis = convergent_basis(&cm, OptimizerKind::Pdmm);
    let template = consensus_template();
    let cfg = StepConfig::default();
    let opts = RunOptions {
        max_rounds: 3,
        primal_tol: 0.0,
        record_states: true,
    };
    let mut known_worst = 0.0f64;
    let mut hidden_abs = Vec::new();
    for seed in 0..100u64 {
        let problem = template.instantiate(g.n(), 3000 + seed).unwrap();
        let dual0 = basis.sample_dual_init(1e6, 4000 + seed, InitMode::Full);
        let trace = run(
            OptimizerKind::Pdmm,
            &problem,
            &cm,
            &basis,
            &cfg,
            &DualInit::Explicit(dual0.clone()),
            &opts,
        )
        .unwrap();
        let known = eavesdrop_reconstruct(&trace, &problem, &cm, &cfg, Some(&dual0)).unwrap();
        let hidden = eavesdrop_reconstruct(&trace, &problem, &cm, &cfg, None).unwrap();
        for i in 0..g.n() {
            known_worst = known_worst.max((&known[i] - problem.target(i)).amax());
            hidden_abs.push((&hidden[i] - problem.target(i)).amax());
        }
    }
    assert!(
        known_worst <= 1e-10,
        "insecure init recovery error {known_worst:e}"
    );
    hidden_abs.sort_by(f64::total_cmp);
    let median = hidden_abs[hidden_abs.len() / 2];
    assert!(median >= 1e2, "hidden-init median error {median:e}");
    println!(
        "[acceptance] criterion 9 (eavesdropper demonstration): PASS — exact recovery {known_worst:.2e}, hidden-init median error {median:.2e}"
    );
}
