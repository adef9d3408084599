//! Stacked-matrix reference implementations of the synchronous rounds.
//!
//! These evaluate the global update equations with explicit matrix algebra
//! (global solves against `H + c C'C`, dual updates through `C`, `PC`, `M`,
//! `W`, `B`), with no per-node message passing. They exist as an independent
//! route for checking the node-local engine round by round and are used by
//! the test suites; they get the same answers, slower.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::Error;
use crate::graph::ConstraintMatrices;
use crate::optimizers::{DualState, OptimizerKind, OptimizerState, Schedule, StepConfig};
use crate::problems::{ProblemInstance, ProblemKind};
use crate::Result;

fn require_sync(cfg: &StepConfig) -> Result<()> {
    match cfg.schedule {
        Schedule::Synchronous => Ok(()),
        Schedule::Asynchronous { .. } => Err(Error::InvalidConfig(
            "the stacked reference engine only implements synchronous rounds".into(),
        )),
    }
}

/// Minimize `0.5 x'Ax - rhs'x (+ alpha |x|_1 for LASSO)` globally; the
/// smooth systems are symmetric positive definite.
fn global_x_min(
    problem: &ProblemInstance,
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
    warm: &DVector<f64>,
) -> Result<DVector<f64>> {
    match problem.kind() {
        ProblemKind::Lasso => problem.stacked_l1_minimize(a, rhs, Some(warm)),
        _ => Cholesky::new(a.clone())
            .map(|ch| ch.solve(rhs))
            .ok_or_else(|| {
                Error::SingularSystem("stacked x-update system is not positive definite".into())
            }),
    }
}

/// One synchronous PDMM round in stacked form.
pub fn pdmm_round_stacked(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    require_sync(cfg)?;
    let (h, lin) = problem.stacked_quadratic();
    let DualState::Pdmm { lambda } = &state.duals else {
        panic!("state does not belong to a PDMM run")
    };
    let ct = cm.c_mat.transpose();
    let a = &h + cfg.c * (&ct * &cm.c_mat);
    let rhs = &lin
        - &ct * cm.swap_halves(lambda)
        - cfg.c * (&ct * (&cm.pc_mat * &state.x - 2.0 * &cm.d_vec));
    let new_x = global_x_min(problem, &a, &rhs, &state.x)?;
    let new_lambda = cm.swap_halves(lambda)
        + cfg.c * (&cm.c_mat * &new_x + &cm.pc_mat * &state.x - 2.0 * &cm.d_vec);
    state.x = new_x;
    state.duals = DualState::Pdmm { lambda: new_lambda };
    state.k += 1;
    state.transmissions += cm.graph().degree_sum() as u64;
    Ok(())
}

/// One synchronous averaged-PDMM round in stacked form.
pub fn averaged_pdmm_round_stacked(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    require_sync(cfg)?;
    let (h, lin) = problem.stacked_quadratic();
    let DualState::Pdmm { lambda } = &state.duals else {
        panic!("state does not belong to a PDMM run")
    };
    let ct = cm.c_mat.transpose();
    let a = &h + cfg.c * (&ct * &cm.c_mat);
    let rhs = &lin
        - &ct * cm.swap_halves(lambda)
        - cfg.c * (&ct * (&cm.pc_mat * &state.x - 2.0 * &cm.d_vec));
    let new_x = global_x_min(problem, &a, &rhs, &state.x)?;
    let permuted = cm.swap_halves(lambda)
        + cfg.c * (&cm.c_mat * &new_x + &cm.pc_mat * &state.x - 2.0 * &cm.d_vec);
    let new_lambda = cfg.theta * lambda + (1.0 - cfg.theta) * permuted;
    state.x = new_x;
    state.duals = DualState::Pdmm { lambda: new_lambda };
    state.k += 1;
    state.transmissions += cm.graph().degree_sum() as u64;
    Ok(())
}

/// One synchronous ADMM round in stacked form.
pub fn admm_round_stacked(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    require_sync(cfg)?;
    let (h, lin) = problem.stacked_quadratic();
    let DualState::Admm { v, z } = &state.duals else {
        panic!("state does not belong to an ADMM run")
    };
    let mt = cm.m_mat.transpose();
    let a = &h + cfg.c * (&mt * &cm.m_mat);
    let rhs = &lin - &mt * v - cfg.c * (&mt * (&cm.w_mat * z - 2.0 * &cm.d_vec));
    let new_x = global_x_min(problem, &a, &rhs, &state.x)?;
    // W'W = 2I gives the z-minimization in closed form.
    let new_z = -(cm.w_mat.transpose() * (v + cfg.c * (&cm.m_mat * &new_x - 2.0 * &cm.d_vec)))
        / (2.0 * cfg.c);
    let new_v = v + cfg.c * (&cm.m_mat * &new_x + &cm.w_mat * &new_z - 2.0 * &cm.d_vec);
    state.x = new_x;
    state.duals = DualState::Admm { v: new_v, z: new_z };
    state.k += 1;
    state.transmissions += cm.graph().degree_sum() as u64;
    Ok(())
}

/// One synchronous dual-ascent round in stacked form.
pub fn dual_ascent_round_stacked(
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    require_sync(cfg)?;
    let t = cfg
        .t
        .unwrap_or_else(|| crate::optimizers::default_dual_ascent_step(cm, problem));
    let (h, lin) = problem.stacked_quadratic();
    let DualState::DualAscent { u_vec } = &state.duals else {
        panic!("state does not belong to a dual ascent run")
    };
    let rhs = &lin - cm.b_mat.transpose() * u_vec;
    let new_x = global_x_min(problem, &h, &rhs, &state.x)?;
    let new_u = u_vec + t * (&cm.b_mat * &new_x - &cm.b_vec);
    state.x = new_x;
    state.duals = DualState::DualAscent { u_vec: new_u };
    state.k += 1;
    state.transmissions += cm.graph().degree_sum() as u64;
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

/// Dispatch one stacked round of the selected optimizer.
pub fn step_round_stacked(
    kind: OptimizerKind,
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
) -> Result<()> {
    match kind {
        OptimizerKind::Pdmm => pdmm_round_stacked(state, problem, cm, cfg),
        OptimizerKind::AveragedPdmm => averaged_pdmm_round_stacked(state, problem, cm, cfg),
        OptimizerKind::Admm => admm_round_stacked(state, problem, cm, cfg),
        OptimizerKind::DualAscent => dual_ascent_round_stacked(state, problem, cm, cfg),
    }
}
