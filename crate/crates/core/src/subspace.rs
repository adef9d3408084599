//! Convergent-subspace machinery for the dual variables.
//!
//! Each optimizer's dual updates act only inside a subspace spanned by its
//! stacked constraint matrices: `span(C) + span(PC)` for PDMM,
//! `span(M) + span(W)` for ADMM and `span(B)` for dual ascent. The component
//! in the orthogonal complement is merely permuted (PDMM) or left untouched
//! (ADMM, dual ascent), which is where perturbation noise lives.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::ConstraintMatrices;
use crate::optimizers::OptimizerKind;
use crate::seeds;
use crate::Result;

/// Relative singular-value threshold used for rank decisions. Incidence-type
/// matrices have well-separated spectra at these sizes, so the cut is robust.
pub const RANK_TOL: f64 = 1e-10;

/// Relative residual above which the stacked optimality system for the
/// optimal dual point is declared infeasible.
const DUAL_RESIDUAL_TOL: f64 = 1e-8;

/// How a dual initialization is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// I.i.d. zero-mean Gaussian entries over the full ambient space; with
    /// probability one the non-convergent component is nonzero.
    Full,
    /// Same draw projected onto the convergent subspace: the non-private
    /// baseline whose non-convergent component is zero.
    InSubspace,
}

/// Orthonormal basis of the convergent subspace of one optimizer.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    kind: OptimizerKind,
    /// `ambient_dim x rank`, orthonormal columns.
    basis: DMatrix<f64>,
    ambient_dim: usize,
    rank: usize,
    tol: f64,
}

/// Singular spectrum of `a` computed through the Gram matrix on its smaller
/// side (the symmetric eigensolver is reliable on the repeated spectra of
/// incidence-type matrices, where a direct bidiagonal SVD can fail to
/// converge). Returns the left singular vectors whose singular values exceed
/// `tol * sigma_max`, re-orthonormalized, together with the kept values.
fn gram_span_basis(a: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, Vec<f64>) {
    let (rows, cols) = a.shape();
    let take_small_side_left = rows <= cols;
    let gram = if take_small_side_left {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let eig_max = eig.eigenvalues[order[0]].max(0.0);
    // Rank rule: sigma > tol * sigma_max, floored above the eigensolver's
    // noise so the squared spectrum cannot resurrect null directions.
    let cut_eig = (tol * tol * eig_max).max(1e-12 * eig_max);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > cut_eig)
        .collect();
    let sigmas: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i].sqrt()).collect();
    let mut basis = DMatrix::zeros(rows, kept.len());
    if take_small_side_left {
        for (out, &i) in kept.iter().enumerate() {
            basis.column_mut(out).copy_from(&eig.eigenvectors.column(i));
        }
    } else {
        for (out, &i) in kept.iter().enumerate() {
            let u = a * eig.eigenvectors.column(i) / sigmas[out];
            basis.column_mut(out).copy_from(&u);
        }
        // The mapped vectors inherit orthonormality up to eps times the
        // squared spectral spread; incidence-type spectra are tight, so the
        // Gram-Schmidt polish only runs when the kept spread is wide.
        if sigmas.last().copied().unwrap_or(1.0) < 1e-4 * sigmas[0] {
            orthonormalize_in_place(&mut basis);
        }
    }
    (basis, sigmas)
}

/// One modified Gram-Schmidt pass with re-orthogonalization over already
/// nearly orthonormal columns.
fn orthonormalize_in_place(basis: &mut DMatrix<f64>) {
    for j in 0..basis.ncols() {
        for _ in 0..2 {
            for i in 0..j {
                let proj = basis.column(i).dot(&basis.column(j));
                let prev = basis.column(i).into_owned();
                basis.column_mut(j).axpy(-proj, &prev, 1.0);
            }
        }
        let norm = basis.column(j).norm();
        basis.column_mut(j).scale_mut(1.0 / norm);
    }
}

/// Orthonormal basis of the column span of the optimizer's stacked matrix:
/// `[C PC]` for (averaged) PDMM, `[M W]` for ADMM, `B` for dual ascent. Rank
/// is decided by singular values above `RANK_TOL` times the largest.
pub fn convergent_basis(cm: &ConstraintMatrices, kind: OptimizerKind) -> SubspaceBasis {
    let concat = match kind {
        OptimizerKind::Pdmm | OptimizerKind::AveragedPdmm => {
            let mut a = DMatrix::zeros(cm.dual_dim(), 2 * cm.primal_dim());
            a.columns_mut(0, cm.primal_dim()).copy_from(&cm.c_mat);
            a.columns_mut(cm.primal_dim(), cm.primal_dim())
                .copy_from(&cm.pc_mat);
            a
        }
        OptimizerKind::Admm => {
            let mut a = DMatrix::zeros(cm.dual_dim(), cm.primal_dim() + cm.edge_dim());
            a.columns_mut(0, cm.primal_dim()).copy_from(&cm.m_mat);
            a.columns_mut(cm.primal_dim(), cm.edge_dim())
                .copy_from(&cm.w_mat);
            a
        }
        OptimizerKind::DualAscent => cm.b_mat.clone(),
    };
    let ambient_dim = concat.nrows();
    let (basis, sigmas) = gram_span_basis(&concat, RANK_TOL);
    SubspaceBasis {
        kind,
        rank: sigmas.len(),
        basis,
        ambient_dim,
        tol: RANK_TOL,
    }
}

impl SubspaceBasis {
    /// Optimizer this basis was built for.
    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Dimension of the dual space.
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Dimension of the convergent subspace.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Dimension of the non-convergent subspace.
    pub fn nonconv_dim(&self) -> usize {
        self.ambient_dim - self.rank
    }

    /// Singular-value threshold that decided the rank.
    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// The orthonormal basis matrix (`ambient_dim x rank`).
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Split `v` into its convergent and non-convergent components;
    /// `v = conv + nonconv` exactly by construction.
    pub fn project(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if v.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                context: "subspace projection",
                expected: self.ambient_dim,
                got: v.len(),
            });
        }
        let conv = &self.basis * self.basis.tr_mul(v);
        let nonconv = v - &conv;
        Ok((conv, nonconv))
    }

    /// Squared norm of the non-convergent component of `v`.
    pub fn nonconv_norm_sq(&self, v: &DVector<f64>) -> f64 {
        let (_, nonconv) = self.project(v).expect("dual dimension checked by caller");
        nonconv.norm_squared()
    }

    /// Draw a dual initialization with i.i.d. `N(0, variance)` entries;
    /// `InitMode::InSubspace` additionally projects onto the convergent
    /// subspace. Deterministic in `seed`; `variance = 0` gives the zero
    /// vector.
    pub fn sample_dual_init(&self, variance: f64, seed: u64, mode: InitMode) -> DVector<f64> {
        let v = sample_gaussian(self.ambient_dim, variance, seed);
        match mode {
            InitMode::Full => v,
            InitMode::InSubspace => {
                let (conv, _) = self.project(&v).expect("dimensions match by construction");
                conv
            }
        }
    }
}

/// I.i.d. zero-mean Gaussian vector with the given variance; the zero vector
/// when `variance == 0`.
pub fn sample_gaussian(dim: usize, variance: f64, seed: u64) -> DVector<f64> {
    assert!(variance >= 0.0, "variance must be non-negative");
    if variance == 0.0 {
        return DVector::zeros(dim);
    }
    let sd = variance.sqrt();
    let mut rng = seeds::rng(seed);
    DVector::from_iterator(
        dim,
        (0..dim)
            .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)),
    )
}

/// The point the convergent dual component of PDMM converges to:
///
/// `lambda* = -pinv([C'; (PC)']) * [df(x*) + c C'C x*; df(x*) + c C'PC x*] + c C x*`
///
/// computed with a tolerance-thresholded pseudo-inverse. Errors when the
/// stacked linear system is inconsistent beyond tolerance, which doubles as
/// an infeasibility certificate for the supplied `(x*, df(x*))` pair.
pub fn optimal_dual(
    cm: &ConstraintMatrices,
    subgrad_at_opt: &DVector<f64>,
    x_star: &DVector<f64>,
    c: f64,
) -> Result<DVector<f64>> {
    let nu = cm.primal_dim();
    if subgrad_at_opt.len() != nu || x_star.len() != nu {
        return Err(Error::DimensionMismatch {
            context: "optimal dual",
            expected: nu,
            got: subgrad_at_opt.len().max(x_star.len()),
        });
    }
    let ct = cm.c_mat.transpose();
    let cx = &cm.c_mat * x_star;
    let pcx = &cm.pc_mat * x_star;
    let mut stacked = DMatrix::zeros(2 * nu, cm.dual_dim());
    stacked.rows_mut(0, nu).copy_from(&ct);
    stacked.rows_mut(nu, nu).copy_from(&cm.pc_mat.transpose());
    let mut rhs = DVector::zeros(2 * nu);
    rhs.rows_mut(0, nu)
        .copy_from(&(subgrad_at_opt + c * (&ct * &cx)));
    rhs.rows_mut(nu, nu)
        .copy_from(&(subgrad_at_opt + c * (&ct * &pcx)));

    let w = min_norm_solve(&stacked, &rhs);
    let residual = (&stacked * &w - &rhs).norm();
    let tol = DUAL_RESIDUAL_TOL * (1.0 + rhs.norm());
    if residual > tol {
        return Err(Error::InfeasibleDual { residual, tol });
    }
    Ok(c * cx - w)
}

/// Tolerance-thresholded pseudo-inverse application `a^+ b`, through the
/// Gram spectrum of the smaller side.
fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (rows, cols) = a.shape();
    if rows <= cols {
        // a^+ = a' (a a')^+
        let (u, sigmas) = gram_span_basis(a, RANK_TOL);
        let mut coeffs = u.transpose() * b;
        for (i, s) in sigmas.iter().enumerate() {
            coeffs[i] /= s * s;
        }
        a.transpose() * (u * coeffs)
    } else {
        // a^+ = (a' a)^+ a'
        let (v, sigmas) = gram_span_basis(&a.transpose(), RANK_TOL);
        let mut coeffs = v.transpose() * (a.transpose() * b);
        for (i, s) in sigmas.iter().enumerate() {
            coeffs[i] /= s * s;
        }
        v * coeffs
    }
}
