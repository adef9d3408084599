//! Information-leakage quantification: analytic bounds, honest components,
//! Monte Carlo mutual-information curves, an eavesdropper reconstruction
//! attack and a noise-on-state baseline for contrast.

pub mod mi;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;
use crate::graph::{ConstraintMatrices, Graph};
use crate::optimizers::{self, OptimizerKind, OptimizerState, Schedule, StepConfig};
use crate::problems::{ProblemInstance, ProblemKind, ProblemTemplate};
use crate::seeds;
use crate::subspace::{InitMode, SubspaceBasis};
use crate::trace::{Trace, TraceMeta, TraceRecord};
use crate::Result;

pub use mi::{digamma, estimate_mi};

/// Fewest Monte Carlo samples the estimator is trusted with.
pub const MIN_MI_SAMPLES: usize = 1000;

/// Default neighbor count of the MI estimator.
pub const DEFAULT_MI_K: usize = 3;

/// A mutual-information quantity in bits whose infinite value serializes as
/// the string `"inf"` rather than a large float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bits(pub f64);

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            ser.serialize_str("inf")
        } else {
            ser.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(Bits(v)),
            Raw::Text(s) if s == "inf" => Ok(Bits(f64::INFINITY)),
            Raw::Text(s) => Err(D::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

impl Bits {
    pub fn is_sentinel(&self) -> bool {
        self.0.is_infinite()
    }
}

/// Which nodes collude and what the channels reveal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryModel {
    /// Colluding protocol-following nodes.
    pub corrupted: BTreeSet<usize>,
    /// An observer sees every broadcast on every channel.
    pub eavesdrop_all_channels: bool,
    /// Channels are encrypted during the initialization round only, hiding
    /// the transmitted dual initialization from the eavesdropper.
    pub secure_init_round: bool,
}

impl Default for AdversaryModel {
    fn default() -> Self {
        AdversaryModel {
            corrupted: BTreeSet::new(),
            eavesdrop_all_channels: false,
            secure_init_round: true,
        }
    }
}

impl AdversaryModel {
    pub fn validate(&self, g: &Graph) -> Result<()> {
        if let Some(&bad) = self.corrupted.iter().find(|&&i| i >= g.n()) {
            return Err(Error::InvalidConfig(format!(
                "corrupted node {bad} out of range for n = {}",
                g.n()
            )));
        }
        if self.corrupted.len() == g.n() {
            return Err(Error::InvalidConfig(
                "at least one node must stay honest".into(),
            ));
        }
        Ok(())
    }

    pub fn is_honest(&self, i: usize) -> bool {
        !self.corrupted.contains(&i)
    }
}

/// Upper bound on `I(X; Z)` for `Z = X + Y` with Gaussian `Y`:
/// `0.5 log2(1 + var_x / var_y)` bits. `var_y = 0` leaves nothing hidden and
/// returns the infinity sentinel.
pub fn prop2_bound(var_x: f64, var_y: f64) -> f64 {
    assert!(
        var_x >= 0.0 && var_y >= 0.0,
        "variances must be non-negative"
    );
    if var_y == 0.0 {
        return f64::INFINITY;
    }
    0.5 * (1.0 + var_x / var_y).log2()
}

/// Connected components of the subgraph induced on honest nodes, each sorted
/// ascending, ordered by smallest member.
pub fn honest_components(g: &Graph, adv: &AdversaryModel) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..g.n()).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for &(a, b) in g.edges() {
        if adv.is_honest(a) && adv.is_honest(b) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..g.n() {
        if adv.is_honest(i) {
            by_root.entry(find(&mut parent, i)).or_default().push(i);
        }
    }
    by_root.into_values().collect()
}

/// Unavoidable leakage about one member of an honest component of unit-
/// variance Gaussian data, from the component's partial sum: infinite for a
/// singleton (the sum is the value itself), else `0.5 log2(|C| / (|C|-1))`.
pub fn consensus_lower_bound(component_size: usize) -> f64 {
    assert!(component_size >= 1, "components are non-empty");
    if component_size == 1 {
        return f64::INFINITY;
    }
    let s = component_size as f64;
    0.5 * (s / (s - 1.0)).log2()
}

/// Per-node leakage curve plus its bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLeakage {
    pub node: usize,
    /// Estimated `I(S_i; X_i^(k))` in bits, one entry per iteration.
    pub mi_bits: Vec<Bits>,
    /// `mi_bits` divided by the estimated self-information, clamped at zero.
    pub normalized_mi: Vec<f64>,
    /// Estimator applied to `(S_i, S_i)`.
    pub self_mi_bits: Bits,
    /// Size of this node's honest component.
    pub component_size: usize,
    /// Analytic partial-sum bound (infinity sentinel for singletons).
    pub lower_bound_bits: Bits,
    /// The same bound measured by the estimator on the partial-sum samples.
    pub lower_bound_est_bits: Bits,
    /// `lower_bound_est_bits` divided by the estimated self-information.
    pub normalized_lower_bound: f64,
    /// Whether the perturbation condition holds for this node: at least one
    /// honest neighbor and noise variance above the configured threshold.
    pub condition16_satisfied: bool,
}

/// Monte Carlo leakage estimates for every honest node over the first
/// iterations of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub trials: usize,
    pub rounds: usize,
    pub variance: f64,
    pub mode: InitMode,
    pub k_nn: usize,
    pub condition16_variance_threshold: f64,
    /// How vector blocks reduce to the scalar estimates below: each
    /// coordinate is rated separately and the worst one reported.
    pub scalarization: String,
    pub nodes: Vec<NodeLeakage>,
}

impl LeakageReport {
    /// CSV rows `node, iteration, mi_bits, normalized_mi, lower_bound_bits`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("node,iteration,mi_bits,normalized_mi,lower_bound_bits\n");
        let fmt = |b: &Bits| {
            if b.is_sentinel() {
                "inf".to_string()
            } else {
                format!("{:e}", b.0)
            }
        };
        for n in &self.nodes {
            for (idx, mi) in n.mi_bits.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{:e},{}",
                    n.node,
                    idx + 1,
                    fmt(mi),
                    n.normalized_mi[idx],
                    fmt(&n.lower_bound_bits)
                );
            }
        }
        out
    }
}

/// Settings of a Monte Carlo leakage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageOptions {
    pub trials: usize,
    /// Iterations of the protocol to audit.
    pub rounds: usize,
    /// Dual-initialization variance (zero reproduces the non-private
    /// protocol).
    pub variance: f64,
    pub mode: InitMode,
    pub k_nn: usize,
    pub seed: u64,
    /// Variance at or above which the perturbation condition is considered
    /// met for flagging purposes.
    pub condition16_variance_threshold: f64,
}

struct TrialSamples {
    /// `s[h][coord]` for each honest node.
    s: Vec<Vec<f64>>,
    /// `x[h][round-1][coord]`.
    x: Vec<Vec<Vec<f64>>>,
}

/// Estimate per-iteration information leakage of a consensus protocol by
/// redrawing private data and dual initialization across seeded trials,
/// running the optimizer, and feeding each honest node's broadcasts to the
/// MI estimator. Block coordinates are audited separately and the worst one
/// is reported.
pub fn leakage_experiment(
    template: &ProblemTemplate,
    kind: OptimizerKind,
    cm: &ConstraintMatrices,
    basis: &SubspaceBasis,
    cfg: &StepConfig,
    adv: &AdversaryModel,
    opts: &LeakageOptions,
) -> Result<LeakageReport> {
    if template.kind != ProblemKind::Consensus {
        return Err(Error::InvalidConfig(
            "leakage experiments audit consensus protocols; other objectives have no \
             scalar private datum to rate"
                .into(),
        ));
    }
    if opts.trials < MIN_MI_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "trials = {} is below the estimator minimum of {MIN_MI_SAMPLES}",
            opts.trials
        )));
    }
    if opts.rounds == 0 {
        return Err(Error::InvalidConfig(
            "leakage rounds must be at least 1".into(),
        ));
    }
    if !matches!(cfg.schedule, Schedule::Synchronous) {
        return Err(Error::InvalidConfig(
            "leakage curves are per synchronous iteration; use a synchronous schedule".into(),
        ));
    }
    cfg.validate()?;
    template.validate()?;
    let g = cm.graph();
    adv.validate(g)?;
    let honest: Vec<usize> = (0..g.n()).filter(|&i| adv.is_honest(i)).collect();
    let u = template.u;

    let trials: Vec<TrialSamples> = (0..opts.trials)
        .into_par_iter()
        .map(|t| -> Result<TrialSamples> {
            let data_seed = seeds::derive(opts.seed, 2 * t as u64);
            let dual_seed = seeds::derive(opts.seed, 2 * t as u64 + 1);
            let problem = template.instantiate(g.n(), data_seed)?;
            let dual0 = basis.sample_dual_init(opts.variance, dual_seed, opts.mode);
            let mut state = OptimizerState::new(kind, cm, dual0)?;
            let cache = problem.build_cache(&ridge_scales(cm, cfg))?;
            let mut x_per_round = Vec::with_capacity(opts.rounds);
            for _ in 0..opts.rounds {
                step_cached(kind, &mut state, &problem, cm, cfg, &cache)?;
                x_per_round.push(
                    honest
                        .iter()
                        .map(|&h| state.x.rows(h * u, u).iter().copied().collect())
                        .collect::<Vec<Vec<f64>>>(),
                );
            }
            Ok(TrialSamples {
                s: honest
                    .iter()
                    .map(|&h| problem.target(h).iter().copied().collect())
                    .collect(),
                x: (0..honest.len())
                    .map(|hi| {
                        (0..opts.rounds)
                            .map(|r| x_per_round[r][hi].clone())
                            .collect()
                    })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;

    let components = honest_components(g, adv);
    let component_of = |node: usize| -> &Vec<usize> {
        components
            .iter()
            .find(|c| c.contains(&node))
            .expect("honest node belongs to a component")
    };

    let nodes: Vec<NodeLeakage> = honest
        .par_iter()
        .enumerate()
        .map(|(hi, &node)| -> Result<NodeLeakage> {
            let coord_samples = |f: &dyn Fn(&TrialSamples) -> f64| -> Vec<Vec<f64>> {
                trials.iter().map(|t| vec![f(t)]).collect()
            };
            let mut self_mi = f64::NEG_INFINITY;
            let mut bound_est = f64::NEG_INFINITY;
            let comp = component_of(node);
            let comp_idx: Vec<usize> = comp
                .iter()
                .map(|&c| honest.iter().position(|&h| h == c).expect("honest"))
                .collect();
            for coord in 0..u {
                let s = coord_samples(&|t| t.s[hi][coord]);
                self_mi = self_mi.max(estimate_mi(&s, &s, opts.k_nn)?);
                let sums = coord_samples(&|t| comp_idx.iter().map(|&ci| t.s[ci][coord]).sum());
                bound_est = bound_est.max(estimate_mi(&s, &sums, opts.k_nn)?);
            }
            let mut mi_bits = Vec::with_capacity(opts.rounds);
            let mut normalized = Vec::with_capacity(opts.rounds);
            for r in 0..opts.rounds {
                let mut worst = f64::NEG_INFINITY;
                for coord in 0..u {
                    let s = coord_samples(&|t| t.s[hi][coord]);
                    let x = coord_samples(&|t| t.x[hi][r][coord]);
                    worst = worst.max(estimate_mi(&s, &x, opts.k_nn)?);
                }
                mi_bits.push(Bits(worst));
                normalized.push(if self_mi.is_finite() && self_mi > 0.0 {
                    (worst / self_mi).max(0.0)
                } else {
                    0.0
                });
            }
            let has_honest_neighbor = g.neighbors(node).iter().any(|&j| adv.is_honest(j));
            Ok(NodeLeakage {
                node,
                mi_bits,
                normalized_mi: normalized,
                self_mi_bits: Bits(self_mi),
                component_size: comp.len(),
                lower_bound_bits: Bits(consensus_lower_bound(comp.len())),
                lower_bound_est_bits: Bits(bound_est),
                normalized_lower_bound: if self_mi.is_finite() && self_mi > 0.0 {
                    (bound_est / self_mi).max(0.0)
                } else {
                    0.0
                },
                condition16_satisfied: has_honest_neighbor
                    && opts.variance >= opts.condition16_variance_threshold,
            })
        })
        .collect::<Result<_>>()?;

    Ok(LeakageReport {
        trials: opts.trials,
        rounds: opts.rounds,
        variance: opts.variance,
        mode: opts.mode,
        k_nn: opts.k_nn,
        condition16_variance_threshold: opts.condition16_variance_threshold,
        scalarization: "per_coordinate_max".into(),
        nodes,
    })
}

fn ridge_scales(cm: &ConstraintMatrices, cfg: &StepConfig) -> Vec<f64> {
    (0..cm.graph().n())
        .map(|i| cfg.c * cm.graph().degree(i) as f64)
        .collect()
}

fn step_cached(
    kind: OptimizerKind,
    state: &mut OptimizerState,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    cache: &crate::problems::LocalCache,
) -> Result<()> {
    match kind {
        OptimizerKind::Pdmm => optimizers::pdmm_round_cached(state, problem, cm, cfg, cache),
        OptimizerKind::AveragedPdmm => {
            optimizers::averaged_pdmm_round_cached(state, problem, cm, cfg, cache)
        }
        OptimizerKind::Admm => optimizers::admm_round_cached(state, problem, cm, cfg, cache),
        OptimizerKind::DualAscent => {
            let t = cfg
                .t
                .unwrap_or_else(|| optimizers::default_dual_ascent_step(cm, problem));
            optimizers::dual_ascent_round_cached(state, problem, cm, cfg, cache, t)
        }
    }
}

/// What an eavesdropper of every channel recovers of the private consensus
/// data by inverting the first x-update:
///
/// `s_i = x_i^(1) (1 + c d_i) - sum_j (c x_j^(0) - B_{i|j} lambda_{j|i}^(0))`
///
/// With the transmitted dual initialization in hand (initialization channels
/// not secured) recovery is exact; without it the unknown dual term is
/// replaced by zero and the corrupted estimate is returned.
pub fn eavesdrop_reconstruct(
    trace: &Trace,
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    cfg: &StepConfig,
    known_dual_init: Option<&DVector<f64>>,
) -> Result<Vec<DVector<f64>>> {
    if trace.meta.optimizer.subspace_family() != OptimizerKind::Pdmm
        || problem.kind() != ProblemKind::Consensus
    {
        return Err(Error::InvalidConfig(
            "reconstruction inverts the consensus PDMM x-update".into(),
        ));
    }
    let states = trace.states.as_ref().ok_or_else(|| {
        Error::InvalidConfig(
            "trace carries no eavesdropped states; rerun with record_states".into(),
        )
    })?;
    if states.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least rounds 0 and 1 on the trace".into(),
        ));
    }
    let u = cm.block();
    let zeros = DVector::zeros(cm.dual_dim());
    let lambda0 = match known_dual_init {
        Some(v) => {
            if v.len() != cm.dual_dim() {
                return Err(Error::DimensionMismatch {
                    context: "eavesdropped dual init",
                    expected: cm.dual_dim(),
                    got: v.len(),
                });
            }
            v
        }
        None => &zeros,
    };
    let (x0, x1) = (&states[0], &states[1]);
    let mut estimates = Vec::with_capacity(cm.graph().n());
    for i in 0..cm.graph().n() {
        let d_i = cm.graph().degree(i) as f64;
        let mut s_hat = x1.rows(i * u, u) * (1.0 + cfg.c * d_i);
        for inc in cm.incident(i) {
            let xj = x0.rows(inc.nbr * u, u);
            let lam = lambda0.rows(cm.dual_block_start_rev(inc), u);
            s_hat.axpy(-cfg.c, &xj, 1.0);
            s_hat.axpy(inc.sign, &lam, 1.0);
        }
        estimates.push(s_hat);
    }
    Ok(estimates)
}

/// Noise-on-state baseline: plain PDMM consensus where every broadcast state
/// is perturbed with fresh zero-mean Gaussian noise before transmission, the
/// classic accuracy-for-privacy trade. Runs a fixed number of synchronous
/// rounds; the trace records the error of the nodes' own (pre-noise)
/// iterates.
pub fn dp_baseline_consensus(
    problem: &ProblemInstance,
    cm: &ConstraintMatrices,
    basis: &SubspaceBasis,
    cfg: &StepConfig,
    noise_variance: f64,
    noise_seed: u64,
    rounds: usize,
) -> Result<Trace> {
    if problem.kind() != ProblemKind::Consensus {
        return Err(Error::InvalidConfig(
            "the noise-on-state baseline is a consensus protocol".into(),
        ));
    }
    if !matches!(cfg.schedule, Schedule::Synchronous) {
        return Err(Error::InvalidConfig(
            "the noise-on-state baseline runs synchronously".into(),
        ));
    }
    cfg.validate()?;
    let (x_star, _) = problem.centralized_solution()?;
    let g = cm.graph();
    let u = cm.block();
    let nu = cm.primal_dim();
    let cache = problem.build_cache(&ridge_scales(cm, cfg))?;
    let mut rng = seeds::rng(noise_seed);
    let sd = noise_variance.sqrt();

    let mut x_true = DVector::zeros(nu);
    let mut x_pub = DVector::zeros(nu);
    let mut lambda = DVector::zeros(cm.dual_dim());
    let mut transmissions = 0u64;

    let mut trace = Trace::new(TraceMeta {
        optimizer: OptimizerKind::Pdmm,
        problem: problem.kind(),
        schedule: cfg.schedule,
        variance: Some(noise_variance),
        mode: None,
        dual_seed: Some(noise_seed),
        data_seed: problem.data_seed(),
        x_star_norm_sq: x_star.norm_squared(),
        config_hash: None,
    });
    let record = |trace: &mut Trace, k: usize, tx: u64, x: &DVector<f64>, lam: &DVector<f64>| {
        let (_, nonconv) = optimizers::dual_split_norms(basis, lam, None);
        trace.push(TraceRecord {
            round: k,
            transmissions: tx,
            primal_err_sq: (x - &x_star).norm_squared(),
            conv_dual_err_sq: None,
            nonconv_dual_norm_sq: nonconv,
        });
    };
    record(&mut trace, 0, 0, &x_true, &lambda);

    for k in 1..=rounds {
        let mut new_x = DVector::zeros(nu);
        for i in 0..g.n() {
            let mut agg = DVector::zeros(u);
            for inc in cm.incident(i) {
                let xj = x_pub.rows(inc.nbr * u, u);
                let lam = lambda.rows(cm.dual_block_start_rev(inc), u);
                agg.axpy(cfg.c, &xj, 1.0);
                agg.axpy(-inc.sign, &lam, 1.0);
            }
            let xi = problem.local_x_update_cached(&cache, i, &agg, None)?;
            new_x.rows_mut(i * u, u).copy_from(&xi);
        }
        let mut new_pub = new_x.clone();
        if noise_variance > 0.0 {
            for v in new_pub.iter_mut() {
                *v += sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            }
        }
        let mut new_lambda = DVector::zeros(cm.dual_dim());
        for i in 0..g.n() {
            for inc in cm.incident(i) {
                let fwd = cm.dual_block_start(inc);
                let rev = cm.dual_block_start_rev(inc);
                for kk in 0..u {
                    new_lambda[fwd + kk] = lambda[rev + kk]
                        + cfg.c * inc.sign * (new_pub[i * u + kk] - x_pub[inc.nbr * u + kk]);
                }
            }
        }
        x_true = new_x;
        x_pub = new_pub;
        lambda = new_lambda;
        transmissions += if cfg.broadcast_counts_once {
            g.n() as u64
        } else {
            g.degree_sum() as u64
        };
        record(&mut trace, k, transmissions, &x_true, &lambda);
    }
    Ok(trace)
}

/// Mean primal squared error over the last quarter of a trace: the
/// steady-state level of a noisy run.
pub fn steady_state_error(trace: &Trace) -> f64 {
    let n = trace.records.len();
    let tail = (n / 4).max(1);
    trace.records[n - tail..]
        .iter()
        .map(|r| r.primal_err_sq)
        .sum::<f64>()
        / tail as f64
}
