//! Privacy-preserving distributed convex optimization via subspace
//! perturbation.
//!
//! This crate simulates node-local distributed optimizers (PDMM, averaged
//! PDMM, ADMM and dual ascent) on undirected graphs, inserts noise in the
//! non-convergent subspace of the dual variables, and quantifies the
//! resulting information leakage.
//!
//! The main pieces:
//!
//! - [`graph`]: communication graphs and the constraint matrices derived
//!   from the (block) incidence matrix.
//! - [`subspace`]: orthonormal bases of the convergent dual subspace of each
//!   optimizer, projections, perturbed dual initializations and the optimal
//!   dual point.
//! - [`problems`]: average consensus, least squares and LASSO objectives
//!   with their node-local minimizers and centralized oracles.
//! - [`optimizers`]: synchronous/asynchronous protocol rounds in node-local
//!   message-passing form, plus a stacked-matrix reference engine.
//! - [`privacy`]: leakage bounds, honest components, a k-nearest-neighbor
//!   mutual-information estimator, Monte Carlo leakage experiments, an
//!   eavesdropper reconstruction attack, and a noise-on-state baseline.
//! - [`harness`]: experiment configs, sweeps, trace CSV/manifest output and
//!   tail-slope fitting.

pub mod error;
pub mod graph;
pub mod harness;
pub mod optimizers;
pub mod privacy;
pub mod problems;
pub mod seeds;
pub mod subspace;
pub mod trace;

pub use error::Error;
pub use graph::{build_constraint_matrices, generate_geometric_graph, ConstraintMatrices, Graph};
pub use optimizers::{
    run, DualInit, OptimizerKind, OptimizerState, RunOptions, Schedule, StepConfig,
};
pub use problems::{ProblemInstance, ProblemKind};
pub use subspace::{convergent_basis, optimal_dual, SubspaceBasis};
pub use trace::{Trace, TraceRecord};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
