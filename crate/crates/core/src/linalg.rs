//! Rank-revealing factorization and the small dense kernels built on it.
//!
//! Everything here works on `DMatrix<f64>` and is pure. Rank decisions use a
//! strict inequality against the largest singular value: a singular value
//! `s` counts toward the rank iff `s > rank_tol * s_max`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use thiserror::Error;

use crate::error::Error;

/// Relative singular-value threshold used unless a caller overrides it.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("degenerate constraint rows are inconsistent (residual {residual:e})")]
    Inconsistent { residual: f64 },
}

impl LinalgError {
    /// Attach a time index and lift into the crate error.
    pub fn at_step(self, step: usize) -> Error {
        match self {
            LinalgError::NonFinite => Error::Numerical {
                step,
                what: "non-finite matrix entries".into(),
            },
            LinalgError::Inconsistent { residual } => Error::Infeasible {
                step,
                what: format!("degenerate constraint rows with residual {residual:e}"),
            },
        }
    }
}

/// Thin SVD split into range, row space and kernel.
#[derive(Debug, Clone)]
pub struct RankFactorization {
    pub rank: usize,
    /// Singular values in descending order, `min(rows, cols)` of them.
    pub singular_values: DVector<f64>,
    /// Orthonormal columns spanning the column space (`rows x rank`).
    pub range_basis: DMatrix<f64>,
    /// Orthonormal rows spanning the row space (`rank x cols`).
    pub row_space_basis: DMatrix<f64>,
    /// Orthonormal columns spanning the kernel (`cols x (cols - rank)`).
    pub null_space_basis: DMatrix<f64>,
}

impl RankFactorization {
    pub fn rows(&self) -> usize {
        self.range_basis.nrows()
    }

    pub fn cols(&self) -> usize {
        self.row_space_basis.ncols()
    }

    pub fn nullity(&self) -> usize {
        self.null_space_basis.ncols()
    }

    pub fn is_full_row_rank(&self) -> bool {
        self.rank == self.rows()
    }

    /// `V_r diag(1/s) U_r^T`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let mut scaled = self.row_space_basis.transpose();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col /= self.singular_values[j];
        }
        scaled * self.range_basis.transpose()
    }

    /// Apply the pseudo-inverse without forming it.
    pub fn solve_min_norm(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut coeffs = self.range_basis.tr_mul(rhs);
        for (i, mut row) in coeffs.row_iter_mut().enumerate() {
            row /= self.singular_values[i];
        }
        self.row_space_basis.tr_mul(&coeffs)
    }

    /// Orthogonal projector onto the kernel, built as `V V^T`.
    pub fn nullspace_projector(&self) -> DMatrix<f64> {
        &self.null_space_basis * self.null_space_basis.transpose()
    }
}

pub fn rank_factorize(a: &DMatrix<f64>, rank_tol: f64) -> Result<RankFactorization, LinalgError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(RankFactorization {
            rank: 0,
            singular_values: DVector::zeros(0),
            range_basis: DMatrix::zeros(rows, 0),
            row_space_basis: DMatrix::zeros(0, cols),
            null_space_basis: DMatrix::identity(cols, cols),
        });
    }

    // Wide matrices are padded with zero rows so that the SVD returns a full
    // set of right singular vectors; padding does not change V or the
    // nonzero singular values.
    let work = if rows < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, rows).copy_from(a);
        padded
    } else {
        a.clone()
    };
    let svd = SVD::new(work, true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = svd.singular_values;

    let s_max = sv.iter().cloned().fold(0.0, f64::max);
    let rank = if s_max > 0.0 {
        sv.iter().filter(|&&s| s > rank_tol * s_max).count()
    } else {
        0
    };

    Ok(RankFactorization {
        rank,
        singular_values: sv.rows(0, rows.min(cols)).into_owned(),
        range_basis: u.view((0, 0), (rows, rank)).into_owned(),
        row_space_basis: v_t.rows(0, rank).into_owned(),
        null_space_basis: v_t.rows(rank, cols - rank).transpose(),
    })
}

/// Unweighted Moore-Penrose pseudo-inverse at [`DEFAULT_RANK_TOL`].
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    Ok(rank_factorize(a, DEFAULT_RANK_TOL)?.pseudo_inverse())
}

/// Orthogonal projector onto `ker(a)`.
pub fn nullspace_projector(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    Ok(rank_factorize(a, DEFAULT_RANK_TOL)?.nullspace_projector())
}

/// Output of [`split_rank_deficient_constraint`].
#[derive(Debug, Clone)]
pub struct SplitConstraint {
    /// Retained state-input rows: `d_x dx + e_u du = rhs`, `e_u` full row rank.
    pub d_x: DMatrix<f64>,
    pub e_u: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Induced pure-state rows: `c_x dx = c_rhs`, full row rank.
    pub c_x: DMatrix<f64>,
    pub c_rhs: DVector<f64>,
}

/// Compress `a x = b` to an equivalent system with full row rank.
///
/// When `a` already has full row rank the inputs are returned untouched.
/// Otherwise the system is rotated by the left singular vectors of `a`; rows
/// that fall in the left kernel must have a vanishing right-hand side.
pub fn reduce_rows(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rank_tol: f64,
) -> Result<(DMatrix<f64>, DVector<f64>), LinalgError> {
    let fact = rank_factorize(a, rank_tol)?;
    if fact.is_full_row_rank() {
        return Ok((a.clone(), b.clone()));
    }
    let left_kernel = rank_factorize(&fact.range_basis.transpose(), rank_tol)?.null_space_basis;
    let residual = (left_kernel.tr_mul(b)).norm();
    if residual > consistency_tol(b) {
        return Err(LinalgError::Inconsistent { residual });
    }
    Ok((fact.range_basis.tr_mul(a), fact.range_basis.tr_mul(b)))
}

/// Separate `d dx + e du = rhs` into a full-row-rank state-input part and the
/// pure-state rows hidden in the left kernel of `e`.
pub fn split_rank_deficient_constraint(
    d: &DMatrix<f64>,
    e: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rank_tol: f64,
) -> Result<SplitConstraint, LinalgError> {
    let m = d.ncols();
    let fact = rank_factorize(e, rank_tol)?;
    if fact.is_full_row_rank() {
        return Ok(SplitConstraint {
            d_x: d.clone(),
            e_u: e.clone(),
            rhs: rhs.clone(),
            c_x: DMatrix::zeros(0, m),
            c_rhs: DVector::zeros(0),
        });
    }
    if d.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let keep = &fact.range_basis;
    let drop = rank_factorize(&keep.transpose(), rank_tol)?.null_space_basis;
    let (c_x, c_rhs) = reduce_rows(&drop.tr_mul(d), &drop.tr_mul(rhs), rank_tol)?;
    Ok(SplitConstraint {
        d_x: keep.tr_mul(d),
        e_u: keep.tr_mul(e),
        rhs: keep.tr_mul(rhs),
        c_x,
        c_rhs,
    })
}

fn consistency_tol(b: &DVector<f64>) -> f64 {
    1e-9 * (1.0 + b.amax())
}

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`; `+inf` when empty.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Stack two blocks with equal column counts on top of each other.
pub fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub fn vstack_vec(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}
