//! Experiment orchestration: build graph + problem + optimizer cells from a
//! config, run sweeps, emit trace CSVs with a manifest, and fit tail slopes.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::{build_constraint_matrices, generate_geometric_graph, Graph};
use crate::optimizers::{run, DualInit, OptimizerKind, RunOptions, StepConfig};
use crate::privacy::{
    leakage_experiment, AdversaryModel, LeakageOptions, LeakageReport, DEFAULT_MI_K,
};
use crate::problems::ProblemTemplate;
use crate::subspace::{convergent_basis, InitMode, SubspaceBasis};
use crate::trace::Trace;
use crate::Result;

/// Graph source: either a seeded geometric draw or an explicit edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize)>>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match (&self.radius_sq, &self.edges) {
            (Some(r2), None) => generate_geometric_graph(self.n, *r2, self.seed.unwrap_or(0)),
            (None, Some(edges)) => Graph::from_edges(self.n, edges.iter().copied()),
            _ => Err(Error::InvalidConfig(
                "graph needs exactly one of radius_sq (geometric) or edges (explicit)".into(),
            )),
        }
    }
}

/// Dual-initialization sweep: the cross product of variances and modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualInitSpec {
    pub variances: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<InitMode>,
    #[serde(default)]
    pub seed: u64,
}

fn default_modes() -> Vec<InitMode> {
    vec![InitMode::Full]
}

/// Where outputs land.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: String,
    pub prefix: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: "out".into(),
            prefix: "trace".into(),
        }
    }
}

/// A full sweep description: one graph and problem, a set of optimizers,
/// and the dual-initialization grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub problem: ProblemTemplate,
    #[serde(default)]
    pub data_seed: u64,
    pub optimizers: Vec<OptimizerKind>,
    #[serde(default)]
    pub step: StepConfig,
    pub dual_init: DualInitSpec,
    #[serde(default)]
    pub stop: RunOptions,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.optimizers.is_empty() {
            return Err(Error::InvalidConfig("optimizers list is empty".into()));
        }
        if self.dual_init.variances.is_empty() {
            return Err(Error::InvalidConfig(
                "dual_init.variances list is empty".into(),
            ));
        }
        if self.dual_init.modes.is_empty() {
            return Err(Error::InvalidConfig("dual_init.modes list is empty".into()));
        }
        if self.dual_init.variances.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidConfig(
                "dual_init.variances must be non-negative".into(),
            ));
        }
        self.step.validate()?;
        self.problem.validate()?;
        Ok(())
    }

    /// Stable hash of the canonical JSON form (sorted keys, shortest
    /// round-trip floats).
    pub fn hash(&self) -> Result<String> {
        canonical_hash(self)
    }
}

/// FNV-1a over the canonical JSON serialization of any config value.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in canonical.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

/// Run every (optimizer, variance, mode) cell of the sweep. Cells execute
/// concurrently and are collected in grid order, so the output is
/// deterministic for a given config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Trace>> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let graph = cfg.graph.build()?;
    let cm = build_constraint_matrices(&graph, cfg.problem.u);
    let problem = cfg.problem.instantiate(graph.n(), cfg.data_seed)?;

    let families: Vec<OptimizerKind> = {
        let mut f: Vec<OptimizerKind> =
            cfg.optimizers.iter().map(|k| k.subspace_family()).collect();
        f.sort_by_key(|k| k.as_str());
        f.dedup();
        f
    };
    let bases: Vec<(OptimizerKind, SubspaceBasis)> = families
        .into_par_iter()
        .map(|fam| (fam, convergent_basis(&cm, fam)))
        .collect();
    let basis_for = |kind: OptimizerKind| -> &SubspaceBasis {
        &bases
            .iter()
            .find(|(fam, _)| *fam == kind.subspace_family())
            .expect("basis built for every family")
            .1
    };

    let cells: Vec<(OptimizerKind, f64, InitMode)> = cfg
        .optimizers
        .iter()
        .flat_map(|&k| {
            cfg.dual_init
                .variances
                .iter()
                .flat_map(move |&v| cfg.dual_init.modes.iter().map(move |&m| (k, v, m)))
        })
        .collect();

    cells
        .into_par_iter()
        .map(|(kind, variance, mode)| {
            let init = DualInit::Sampled {
                variance,
                mode,
                seed: cfg.dual_init.seed,
            };
            let mut trace = run(
                kind,
                &problem,
                &cm,
                basis_for(kind),
                &cfg.step,
                &init,
                &cfg.stop,
            )
            .map_err(|e| Error::Cell {
                cell: format!("{} variance {variance:e} mode {mode:?}", kind.as_str()),
                source: Box::new(e),
            })?;
            trace.meta.config_hash = Some(hash.clone());
            Ok(trace)
        })
        .collect()
}

/// Manifest entry for one written trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCell {
    pub optimizer: OptimizerKind,
    pub variance: Option<f64>,
    pub mode: Option<InitMode>,
    pub file: String,
    pub rounds: usize,
    pub final_primal_err_sq: f64,
}

/// Index of everything an experiment produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub config_hash: String,
    pub cells: Vec<ManifestCell>,
}

/// Write one CSV per trace plus `manifest.json`; returns the manifest path.
pub fn write_outputs(cfg: &ExperimentConfig, traces: &[Trace], out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let mut cells = Vec::with_capacity(traces.len());
    for trace in traces {
        let variance_tag = trace
            .meta
            .variance
            .map(|v| format!("{v:e}"))
            .unwrap_or_else(|| "explicit".into());
        let mode_tag = match trace.meta.mode {
            Some(InitMode::Full) => "full",
            Some(InitMode::InSubspace) => "in_subspace",
            None => "explicit",
        };
        let file = format!(
            "{}_{}_{}_var{}.csv",
            cfg.output.prefix,
            trace.meta.optimizer.as_str(),
            mode_tag,
            variance_tag
        );
        fs::write(out_dir.join(&file), trace.to_csv_string())?;
        cells.push(ManifestCell {
            optimizer: trace.meta.optimizer,
            variance: trace.meta.variance,
            mode: trace.meta.mode,
            file,
            rounds: trace.records.len().saturating_sub(1),
            final_primal_err_sq: trace.last().map(|r| r.primal_err_sq).unwrap_or(f64::NAN),
        });
    }
    let manifest = Manifest {
        schema: crate::trace::TRACE_CSV_SCHEMA,
        config_hash: cfg.hash()?,
        cells,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Least-squares slope of `log10(primal error)` per round over the final
/// `tail_fraction` of the recorded rounds. Needs at least 20 rounds in the
/// window, all with positive error; exact zeros have no slope and are
/// reported so the caller can shrink the window.
pub fn fit_tail_slope(trace: &Trace, tail_fraction: f64) -> Result<f64> {
    if tail_fraction.is_nan() || tail_fraction <= 0.0 || tail_fraction > 1.0 {
        return Err(Error::InvalidConfig(
            "tail_fraction must lie in (0, 1]".into(),
        ));
    }
    let n = trace.records.len();
    let w = ((n as f64 * tail_fraction).ceil() as usize).min(n);
    if w < 20 {
        return Err(Error::InvalidTrace(format!(
            "tail window has {w} rounds; need at least 20"
        )));
    }
    let window = &trace.records[n - w..];
    if window.iter().any(|r| r.primal_err_sq <= 0.0) {
        return Err(Error::InvalidTrace(
            "primal error reaches zero inside the fit window".into(),
        ));
    }
    // Fit y = a + b k for y = log10(err) = 0.5 log10(err_sq).
    let m = window.len() as f64;
    let mean_k = window.iter().map(|r| r.round as f64).sum::<f64>() / m;
    let mean_y = window
        .iter()
        .map(|r| 0.5 * r.primal_err_sq.log10())
        .sum::<f64>()
        / m;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for r in window {
        let dk = r.round as f64 - mean_k;
        let dy = 0.5 * r.primal_err_sq.log10() - mean_y;
        sxx += dk * dk;
        sxy += dk * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InvalidTrace("degenerate fit window".into()));
    }
    Ok(sxy / sxx)
}

fn default_audit_optimizer() -> OptimizerKind {
    OptimizerKind::Pdmm
}
fn default_audit_rounds() -> usize {
    12
}
fn default_mi_k() -> usize {
    DEFAULT_MI_K
}
fn default_mode() -> InitMode {
    InitMode::Full
}
fn default_trials() -> usize {
    10_000
}

/// Config of a leakage audit: one protocol cell plus the adversary and the
/// Monte Carlo budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub graph: GraphSpec,
    pub problem: ProblemTemplate,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default = "default_audit_optimizer")]
    pub optimizer: OptimizerKind,
    pub variance: f64,
    #[serde(default = "default_mode")]
    pub mode: InitMode,
    #[serde(default)]
    pub adversary: AdversaryModel,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_audit_rounds")]
    pub rounds: usize,
    #[serde(default = "default_mi_k")]
    pub mi_k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to 100x the data variance when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition16_variance_threshold: Option<f64>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Run a leakage audit from config; the report is written by the CLI.
pub fn run_audit(cfg: &AuditConfig) -> Result<LeakageReport> {
    let graph = cfg.graph.build()?;
    let cm = build_constraint_matrices(&graph, cfg.problem.u);
    let basis = convergent_basis(&cm, cfg.optimizer);
    let opts = LeakageOptions {
        trials: cfg.trials,
        rounds: cfg.rounds,
        variance: cfg.variance,
        mode: cfg.mode,
        k_nn: cfg.mi_k,
        seed: cfg.seed,
        condition16_variance_threshold: cfg
            .condition16_variance_threshold
            .unwrap_or(100.0 * cfg.problem.data_variance),
    };
    leakage_experiment(
        &cfg.problem,
        cfg.optimizer,
        &cm,
        &basis,
        &cfg.step,
        &cfg.adversary,
        &opts,
    )
}
