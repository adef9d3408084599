//! Per-run traces: the quantities plotted against transmissions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::optimizers::{OptimizerKind, Schedule};
use crate::problems::ProblemKind;
use crate::subspace::InitMode;

/// Version tag carried in the first line of every trace CSV.
pub const TRACE_CSV_SCHEMA: u32 = 1;

/// One row of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: usize,
    pub transmissions: u64,
    /// `|x^(k) - x*|^2` over the whole network.
    pub primal_err_sq: f64,
    /// `|proj(lambda^(k)) - lambda*|^2`; populated for PDMM on strictly
    /// convex problems only.
    pub conv_dual_err_sq: Option<f64>,
    /// Squared norm of the non-convergent dual component.
    pub nonconv_dual_norm_sq: f64,
}

/// Provenance of a run, enough to reproduce it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub optimizer: OptimizerKind,
    pub problem: ProblemKind,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<InitMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    /// `|x*|^2`, for turning recorded errors into relative ones.
    pub x_star_norm_sq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Full record of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
    /// Primal state per round (index = round), kept when the run was asked
    /// to record what an eavesdropper of every channel would observe.
    pub states: Option<Vec<DVector<f64>>>,
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        Trace {
            meta,
            records: Vec::new(),
            states: None,
        }
    }

    /// Append a record, keeping rounds strictly increasing and transmissions
    /// non-decreasing.
    pub fn push(&mut self, rec: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.round > last.round, "rounds must strictly increase");
            assert!(
                rec.transmissions >= last.transmissions,
                "transmissions must not decrease"
            );
        }
        self.records.push(rec);
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Relative primal error of a record (absolute when `x* = 0`).
    pub fn rel_primal_err(&self, rec: &TraceRecord) -> f64 {
        let err = rec.primal_err_sq.sqrt();
        if self.meta.x_star_norm_sq > 0.0 {
            err / self.meta.x_star_norm_sq.sqrt()
        } else {
            err
        }
    }

    /// Relative primal error after the final recorded round.
    pub fn final_rel_err(&self) -> f64 {
        self.last()
            .map(|r| self.rel_primal_err(r))
            .unwrap_or(f64::INFINITY)
    }

    /// Render as CSV. First line carries the schema version, second the
    /// header; an empty `conv_dual_err_sq` field means "not tracked".
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# subspace-perturb trace schema={TRACE_CSV_SCHEMA}\n"
        ));
        out.push_str("round,transmissions,primal_err_sq,conv_dual_err_sq,nonconv_dual_norm_sq\n");
        for r in &self.records {
            let conv = r
                .conv_dual_err_sq
                .map(|v| format!("{v:e}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:e},{},{:e}\n",
                r.round, r.transmissions, r.primal_err_sq, conv, r.nonconv_dual_norm_sq
            ));
        }
        out
    }
}
