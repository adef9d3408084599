//! Application objectives: distributed average consensus, least squares and
//! LASSO.
//!
//! Each problem supplies the node-local `x`-minimizer used by the penalty
//! optimizers, the local minimizer used by dual ascent, and a centralized
//! oracle for the ground-truth solution. Private data lives here; the
//! optimizers only see it through these minimizers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::seeds;
use crate::Result;

/// Inner tolerance of the per-node coordinate-descent LASSO solver.
const CD_TOL: f64 = 1e-12;
const CD_MAX_SWEEPS: usize = 100_000;

/// Optimality tolerance (sub-gradient residual, infinity norm) of the
/// centralized LASSO oracle.
const LASSO_ORACLE_TOL: f64 = 1e-12;
const LASSO_ORACLE_MAX_ITERS: usize = 5_000_000;

/// Which objective a problem instance carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Consensus,
    LeastSquares,
    Lasso,
}

/// Per-node private data plus the objective kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemJson", into = "ProblemJson")]
pub struct ProblemInstance {
    kind: ProblemKind,
    u: usize,
    s: Vec<DVector<f64>>,
    q: Vec<DMatrix<f64>>,
    y: Vec<DVector<f64>>,
    alpha: f64,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemJson {
    kind: ProblemKind,
    u: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    s: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    q: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    y: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl From<ProblemInstance> for ProblemJson {
    fn from(p: ProblemInstance) -> Self {
        ProblemJson {
            kind: p.kind,
            u: p.u,
            s: p.s.iter().map(|v| v.as_slice().to_vec()).collect(),
            q: p.q
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            y: p.y.iter().map(|v| v.as_slice().to_vec()).collect(),
            alpha: (p.kind == ProblemKind::Lasso).then_some(p.alpha),
            seed: p.seed,
        }
    }
}

impl TryFrom<ProblemJson> for ProblemInstance {
    type Error = Error;

    fn try_from(j: ProblemJson) -> Result<ProblemInstance> {
        match j.kind {
            ProblemKind::Consensus => {
                let s = j.s.iter().map(|v| DVector::from_column_slice(v)).collect();
                let mut p = ProblemInstance::consensus(s)?;
                p.seed = j.seed;
                Ok(p)
            }
            ProblemKind::LeastSquares | ProblemKind::Lasso => {
                let q: Vec<DMatrix<f64>> =
                    j.q.iter()
                        .map(|rows| {
                            let p_i = rows.len();
                            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                            if p_i == 0 || flat.len() != p_i * j.u {
                                return Err(Error::InvalidConfig(format!(
                                    "observation matrix must be p_i x {} with p_i >= 1",
                                    j.u
                                )));
                            }
                            Ok(DMatrix::from_row_slice(p_i, j.u, &flat))
                        })
                        .collect::<Result<_>>()?;
                let y = j.y.iter().map(|v| DVector::from_column_slice(v)).collect();
                let mut p = if j.kind == ProblemKind::LeastSquares {
                    ProblemInstance::least_squares(q, y)?
                } else {
                    let alpha = j.alpha.ok_or_else(|| {
                        Error::InvalidConfig("lasso problem requires alpha".into())
                    })?;
                    ProblemInstance::lasso(q, y, alpha)?
                };
                p.seed = j.seed;
                Ok(p)
            }
        }
    }
}

impl ProblemInstance {
    /// Average consensus: node `i` holds target `s_i` and the network agrees
    /// on the mean.
    pub fn consensus(s: Vec<DVector<f64>>) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidConfig(
                "consensus needs at least one node".into(),
            ));
        }
        let u = s[0].len();
        if u == 0 || s.iter().any(|v| v.len() != u) {
            return Err(Error::InvalidConfig(
                "all s_i must share a positive length".into(),
            ));
        }
        Ok(ProblemInstance {
            kind: ProblemKind::Consensus,
            u,
            s,
            q: Vec::new(),
            y: Vec::new(),
            alpha: 0.0,
            seed: None,
        })
    }

    /// Least squares: node `i` holds observations `(Q_i, y_i)`.
    pub fn least_squares(q: Vec<DMatrix<f64>>, y: Vec<DVector<f64>>) -> Result<Self> {
        let u = Self::check_qy(&q, &y)?;
        Ok(ProblemInstance {
            kind: ProblemKind::LeastSquares,
            u,
            s: Vec::new(),
            q,
            y,
            alpha: 0.0,
            seed: None,
        })
    }

    /// LASSO: least squares plus an `l1` weight `alpha > 0` per node.
    pub fn lasso(q: Vec<DMatrix<f64>>, y: Vec<DVector<f64>>, alpha: f64) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let u = Self::check_qy(&q, &y)?;
        Ok(ProblemInstance {
            kind: ProblemKind::Lasso,
            u,
            s: Vec::new(),
            q,
            y,
            alpha,
            seed: None,
        })
    }

    fn check_qy(q: &[DMatrix<f64>], y: &[DVector<f64>]) -> Result<usize> {
        if q.is_empty() || q.len() != y.len() {
            return Err(Error::InvalidConfig(
                "need matching, non-empty per-node observation lists".into(),
            ));
        }
        let u = q[0].ncols();
        for (qi, yi) in q.iter().zip(y) {
            if qi.ncols() != u || qi.nrows() == 0 || qi.nrows() != yi.len() {
                return Err(Error::InvalidConfig(
                    "each Q_i must be p_i x u with y_i of length p_i".into(),
                ));
            }
        }
        Ok(u)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    /// Block size of the per-node optimization variable.
    pub fn block(&self) -> usize {
        self.u
    }

    pub fn n_nodes(&self) -> usize {
        match self.kind {
            ProblemKind::Consensus => self.s.len(),
            _ => self.q.len(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Consensus target of node `i` (consensus problems only).
    pub fn target(&self, i: usize) -> &DVector<f64> {
        &self.s[i]
    }

    /// Seed the data was drawn from, when generated.
    pub fn data_seed(&self) -> Option<u64> {
        self.seed
    }

    /// True when every local objective is strictly convex, which is what the
    /// optimal-dual bookkeeping requires.
    pub fn is_strictly_convex(&self) -> bool {
        self.kind != ProblemKind::Lasso
    }

    /// Node-local minimizer of the penalty form shared by PDMM and ADMM:
    ///
    /// `argmin f_i(x) - aggregate' x + (scale/2) |x|^2`
    ///
    /// where `aggregate` collects the neighbor terms supplied by the
    /// optimizer and `scale = c * d_i`.
    pub fn local_x_update(
        &self,
        i: usize,
        aggregate: &DVector<f64>,
        scale: f64,
    ) -> Result<DVector<f64>> {
        self.local_x_update_warm(i, aggregate, scale, None)
    }

    /// Same as [`Self::local_x_update`] but warm-starting the LASSO inner
    /// solver, which the optimizers use between rounds.
    pub fn local_x_update_warm(
        &self,
        i: usize,
        aggregate: &DVector<f64>,
        scale: f64,
        warm: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        if aggregate.len() != self.u {
            return Err(Error::DimensionMismatch {
                context: "local x update",
                expected: self.u,
                got: aggregate.len(),
            });
        }
        match self.kind {
            ProblemKind::Consensus => Ok((&self.s[i] + aggregate) / (1.0 + scale)),
            ProblemKind::LeastSquares => {
                let mut a = self.q[i].transpose() * &self.q[i];
                for k in 0..self.u {
                    a[(k, k)] += scale;
                }
                let rhs = self.q[i].transpose() * &self.y[i] + aggregate;
                solve_spd(a, &rhs, "Q_i'Q_i + c d_i I")
            }
            ProblemKind::Lasso => {
                let mut a = self.q[i].transpose() * &self.q[i];
                for k in 0..self.u {
                    a[(k, k)] += scale;
                }
                let rhs = self.q[i].transpose() * &self.y[i] + aggregate;
                coordinate_descent_l1(&a, &rhs, self.alpha, warm)
            }
        }
    }

    /// Node-local minimizer of the dual-ascent Lagrangian,
    /// `argmin f_i(x) + linear' x` with `linear = (B'u)_i`.
    pub fn dual_ascent_local_x(&self, i: usize, linear: &DVector<f64>) -> Result<DVector<f64>> {
        self.dual_ascent_local_x_warm(i, linear, None)
    }

    pub fn dual_ascent_local_x_warm(
        &self,
        i: usize,
        linear: &DVector<f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        if linear.len() != self.u {
            return Err(Error::DimensionMismatch {
                context: "dual ascent local x",
                expected: self.u,
                got: linear.len(),
            });
        }
        match self.kind {
            ProblemKind::Consensus => Ok(&self.s[i] - linear),
            ProblemKind::LeastSquares => {
                let a = self.q[i].transpose() * &self.q[i];
                let rhs = self.q[i].transpose() * &self.y[i] - linear;
                solve_spd(a, &rhs, "Q_i'Q_i")
            }
            ProblemKind::Lasso => {
                let a = self.q[i].transpose() * &self.q[i];
                let rhs = self.q[i].transpose() * &self.y[i] - linear;
                coordinate_descent_l1(&a, &rhs, self.alpha, warm)
            }
        }
    }

    /// Ground truth: the stacked optimum (`x*` replicated per node) and a
    /// subgradient of the separable objective at it, block per node.
    ///
    /// Consensus and least squares are solved in closed form; LASSO by
    /// proximal gradient on the aggregated objective
    /// `0.5 |y - Q x|^2 + n alpha |x|_1` to sub-gradient residual 1e-12.
    pub fn centralized_solution(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.n_nodes();
        let u = self.u;
        let x_star = match self.kind {
            ProblemKind::Consensus => {
                let mut mean = DVector::zeros(u);
                for si in &self.s {
                    mean += si;
                }
                mean /= n as f64;
                mean
            }
            ProblemKind::LeastSquares => {
                let (gram, rhs) = self.stacked_normal_eqs();
                Cholesky::new(gram)
                    .ok_or_else(|| Error::SingularSystem("stacked Q is rank deficient".into()))?
                    .solve(&rhs)
            }
            ProblemKind::Lasso => self.centralized_lasso()?,
        };
        let mut stacked_x = DVector::zeros(n * u);
        let mut subgrad = DVector::zeros(n * u);
        for i in 0..n {
            stacked_x.rows_mut(i * u, u).copy_from(&x_star);
            let g = match self.kind {
                ProblemKind::Consensus => &x_star - &self.s[i],
                ProblemKind::LeastSquares => {
                    self.q[i].transpose() * (&self.q[i] * &x_star - &self.y[i])
                }
                ProblemKind::Lasso => {
                    // Split the aggregate l1 sub-gradient evenly across nodes
                    // so the blocks sum to zero at the optimum.
                    let (gram, rhs) = self.stacked_normal_eqs();
                    let sg = -(gram * &x_star - &rhs) / (n as f64 * self.alpha);
                    self.q[i].transpose() * (&self.q[i] * &x_star - &self.y[i]) + self.alpha * sg
                }
            };
            subgrad.rows_mut(i * u, u).copy_from(&g);
        }
        Ok((stacked_x, subgrad))
    }

    fn stacked_normal_eqs(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut gram = DMatrix::zeros(self.u, self.u);
        let mut rhs = DVector::zeros(self.u);
        for (qi, yi) in self.q.iter().zip(&self.y) {
            gram += qi.transpose() * qi;
            rhs += qi.transpose() * yi;
        }
        (gram, rhs)
    }

    fn centralized_lasso(&self) -> Result<DVector<f64>> {
        let (gram, rhs) = self.stacked_normal_eqs();
        let beta = self.n_nodes() as f64 * self.alpha;
        let lip = gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .max()
            .max(f64::MIN_POSITIVE);
        let step = 1.0 / lip;
        let mut x = DVector::zeros(self.u);
        for iter in 0..LASSO_ORACLE_MAX_ITERS {
            let grad = &gram * &x - &rhs;
            let mut next = &x - step * &grad;
            for k in 0..self.u {
                next[k] = soft_threshold(next[k], step * beta);
            }
            x = next;
            if iter % 50 == 0 && lasso_residual(&gram, &rhs, beta, &x) <= LASSO_ORACLE_TOL {
                return Ok(x);
            }
        }
        let res = lasso_residual(&gram, &rhs, beta, &x);
        if res <= LASSO_ORACLE_TOL {
            return Ok(x);
        }
        Err(Error::InnerSolverStalled {
            solver: "centralized lasso oracle",
            max_iters: LASSO_ORACLE_MAX_ITERS,
            residual: res,
        })
    }
}

/// Per-node solver state that stays fixed across rounds: the ridge scales
/// `c d_i`, the linear terms `Q_i' y_i` and, for least squares, the Cholesky
/// factor of `Q_i'Q_i + c d_i I`. Factorizations are iteration-invariant, so
/// the optimizers build this once per run.
#[derive(Debug, Clone)]
pub struct LocalCache {
    scales: Vec<f64>,
    lin: Vec<DVector<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
    a_mats: Vec<DMatrix<f64>>,
}

impl ProblemInstance {
    /// Precompute the per-node factorizations for the given ridge scales
    /// (`scale[i] = c * d_i` for PDMM/ADMM, all zeros for dual ascent).
    pub fn build_cache(&self, scales: &[f64]) -> Result<LocalCache> {
        let n = self.n_nodes();
        if scales.len() != n {
            return Err(Error::DimensionMismatch {
                context: "local cache scales",
                expected: n,
                got: scales.len(),
            });
        }
        let mut cache = LocalCache {
            scales: scales.to_vec(),
            lin: Vec::new(),
            chol: Vec::new(),
            a_mats: Vec::new(),
        };
        match self.kind {
            ProblemKind::Consensus => {}
            ProblemKind::LeastSquares => {
                for (i, (qi, yi)) in self.q.iter().zip(&self.y).enumerate() {
                    let mut a = qi.transpose() * qi;
                    for k in 0..self.u {
                        a[(k, k)] += scales[i];
                    }
                    cache.lin.push(qi.transpose() * yi);
                    cache.chol.push(Cholesky::new(a).ok_or_else(|| {
                        Error::SingularSystem(format!(
                            "Q_{i}'Q_{i} + {} I is not positive definite",
                            scales[i]
                        ))
                    })?);
                }
            }
            ProblemKind::Lasso => {
                for (i, (qi, yi)) in self.q.iter().zip(&self.y).enumerate() {
                    let mut a = qi.transpose() * qi;
                    for k in 0..self.u {
                        a[(k, k)] += scales[i];
                    }
                    cache.lin.push(qi.transpose() * yi);
                    cache.a_mats.push(a);
                }
            }
        }
        Ok(cache)
    }

    /// [`Self::local_x_update`] through the cached factorizations; produces
    /// the same values as the uncached path.
    pub fn local_x_update_cached(
        &self,
        cache: &LocalCache,
        i: usize,
        aggregate: &DVector<f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        match self.kind {
            ProblemKind::Consensus => Ok((&self.s[i] + aggregate) / (1.0 + cache.scales[i])),
            ProblemKind::LeastSquares => Ok(cache.chol[i].solve(&(&cache.lin[i] + aggregate))),
            ProblemKind::Lasso => coordinate_descent_l1(
                &cache.a_mats[i],
                &(&cache.lin[i] + aggregate),
                self.alpha,
                warm,
            ),
        }
    }

    /// Objective-only quadratic pieces of the stacked problem:
    /// `f(x) = 0.5 x'Hx - lin'x + alpha |x|_1 + const` with `H` block
    /// diagonal. Used by the stacked-matrix reference engine and oracles.
    pub fn stacked_quadratic(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_nodes();
        let u = self.u;
        let mut h = DMatrix::zeros(n * u, n * u);
        let mut lin = DVector::zeros(n * u);
        for i in 0..n {
            match self.kind {
                ProblemKind::Consensus => {
                    for k in 0..u {
                        h[(i * u + k, i * u + k)] = 1.0;
                    }
                    lin.rows_mut(i * u, u).copy_from(&self.s[i]);
                }
                ProblemKind::LeastSquares | ProblemKind::Lasso => {
                    let block = self.q[i].transpose() * &self.q[i];
                    h.view_mut((i * u, i * u), (u, u)).copy_from(&block);
                    lin.rows_mut(i * u, u)
                        .copy_from(&(self.q[i].transpose() * &self.y[i]));
                }
            }
        }
        (h, lin)
    }

    /// Stacked-form `l1`-regularized block minimization used by the reference
    /// engine: `argmin 0.5 x'Ax - b'x + alpha |x|_1` for block-diagonal `A`.
    pub fn stacked_l1_minimize(
        &self,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        coordinate_descent_l1(a, b, self.alpha, warm)
    }
}

/// Sub-gradient residual of `0.5 x'Gx - r'x + beta |x|_1` at `x`
/// (infinity norm).
pub fn lasso_residual(gram: &DMatrix<f64>, rhs: &DVector<f64>, beta: f64, x: &DVector<f64>) -> f64 {
    let g = gram * x - rhs;
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let r = if x[k] != 0.0 {
            (g[k] + beta * x[k].signum()).abs()
        } else {
            (g[k].abs() - beta).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

fn solve_spd(a: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Cholesky::new(a)
        .ok_or_else(|| Error::SingularSystem(format!("{what} is not positive definite")))
        .map(|ch| ch.solve(rhs))
}

/// `sign(v) * max(|v| - t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for `0.5 x'Ax - b'x + alpha |x|_1` with `A`
/// positive semidefinite. Coordinates with `A_kk = 0` stay at zero unless the
/// problem is unbounded along them, which is reported as an error.
fn coordinate_descent_l1(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    alpha: f64,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let u = b.len();
    let mut x = warm.cloned().unwrap_or_else(|| DVector::zeros(u));
    let mut ax = a * &x;
    let mut last_delta = f64::INFINITY;
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_delta: f64 = 0.0;
        for k in 0..u {
            let akk = a[(k, k)];
            let r = b[k] - ax[k] + akk * x[k];
            let new = if akk > 0.0 {
                soft_threshold(r, alpha) / akk
            } else if r.abs() <= alpha {
                0.0
            } else {
                return Err(Error::SingularSystem(
                    "l1 coordinate subproblem unbounded (zero curvature, large linear term)".into(),
                ));
            };
            let delta = new - x[k];
            if delta != 0.0 {
                ax += delta * a.column(k);
                x[k] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        last_delta = max_delta;
        if max_delta <= CD_TOL * x.amax().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::InnerSolverStalled {
        solver: "lasso coordinate descent",
        max_iters: CD_MAX_SWEEPS,
        residual: last_delta,
    })
}

/// Recipe for drawing fresh problem instances: used by experiment sweeps and
/// Monte Carlo leakage trials. Data entries are i.i.d. Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemTemplate {
    pub kind: ProblemKind,
    pub u: usize,
    /// Observations per node (`p_i`); ignored for consensus.
    #[serde(default = "default_rows")]
    pub rows_per_node: usize,
    /// `l1` weight; used by LASSO only.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Variance of the Gaussian private data.
    #[serde(default = "default_data_variance")]
    pub data_variance: f64,
}

fn default_rows() -> usize {
    1
}
fn default_alpha() -> f64 {
    0.1
}
fn default_data_variance() -> f64 {
    1.0
}

impl ProblemTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.u == 0 {
            return Err(Error::InvalidConfig("problem.u must be at least 1".into()));
        }
        if self.kind != ProblemKind::Consensus && self.rows_per_node == 0 {
            return Err(Error::InvalidConfig(
                "problem.rows_per_node must be at least 1".into(),
            ));
        }
        if self.kind == ProblemKind::Lasso && (self.alpha.is_nan() || self.alpha <= 0.0) {
            return Err(Error::InvalidConfig(
                "problem.alpha must be positive".into(),
            ));
        }
        if self.data_variance.is_nan() || self.data_variance <= 0.0 {
            return Err(Error::InvalidConfig(
                "problem.data_variance must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Draw an instance for `n` nodes; deterministic in `seed`.
    pub fn instantiate(&self, n: usize, seed: u64) -> Result<ProblemInstance> {
        self.validate()?;
        let mut rng = seeds::rng(seed);
        let sd = self.data_variance.sqrt();
        let mut normal = move || -> f64 {
            sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        };
        let mut inst = match self.kind {
            ProblemKind::Consensus => {
                let s = (0..n)
                    .map(|_| DVector::from_fn(self.u, |_, _| normal()))
                    .collect();
                ProblemInstance::consensus(s)?
            }
            ProblemKind::LeastSquares | ProblemKind::Lasso => {
                let q: Vec<DMatrix<f64>> = (0..n)
                    .map(|_| DMatrix::from_fn(self.rows_per_node, self.u, |_, _| normal()))
                    .collect();
                let y: Vec<DVector<f64>> = (0..n)
                    .map(|_| DVector::from_fn(self.rows_per_node, |_, _| normal()))
                    .collect();
                if self.kind == ProblemKind::LeastSquares {
                    ProblemInstance::least_squares(q, y)?
                } else {
                    ProblemInstance::lasso(q, y, self.alpha)?
                }
            }
        };
        inst.seed = Some(seed);
        Ok(inst)
    }
}
