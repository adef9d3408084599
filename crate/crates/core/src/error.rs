//! Crate error type.

/// Errors surfaced by graph construction, solvers and experiment plumbing.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A random geometric graph stayed disconnected after the resampling cap;
    /// the communication radius is too small for the node count.
    #[error("graph disconnected after {attempts} placement attempts (radius_sq = {radius_sq})")]
    Disconnected { attempts: usize, radius_sq: f64 },

    /// Invalid graph description (self loop, duplicate edge, node id out of
    /// range, or a disconnected explicit edge list).
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// Vector or matrix dimensions do not match the graph and block size.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A local or centralized linear system is singular / rank deficient.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// An inner iterative solver hit its iteration cap before reaching its
    /// tolerance.
    #[error("{solver} did not converge within {max_iters} iterations (residual {residual:.3e})")]
    InnerSolverStalled {
        solver: &'static str,
        max_iters: usize,
        residual: f64,
    },

    /// The stacked optimality system for the optimal dual point is
    /// inconsistent beyond tolerance.
    #[error("optimal dual certificate infeasible: residual {residual:.3e} exceeds {tol:.3e}")]
    InfeasibleDual { residual: f64, tol: f64 },

    /// An optimizer iterate blew past the divergence bound (step size too
    /// large).
    #[error("divergence at round {round}: |x| = {norm:.3e} exceeds bound {bound:.3e}")]
    Divergence { round: usize, norm: f64, bound: f64 },

    /// Experiment or plot configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A sweep cell failed; carries the cell coordinates with the cause.
    #[error("cell {cell}: {source}")]
    Cell { cell: String, source: Box<Error> },

    /// A trace does not support the requested analysis (too short, zero
    /// errors inside the fit window, missing column).
    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs; the CLI
    /// maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularSystem(_)
            | Error::InnerSolverStalled { .. }
            | Error::InfeasibleDual { .. }
            | Error::Divergence { .. } => true,
            Error::Cell { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
