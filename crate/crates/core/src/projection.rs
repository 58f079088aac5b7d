//! Constraint projection of the control input.
//!
//! At each step the pure-state constraint of the following step is previewed
//! through the linearized dynamics and stacked under the state-input
//! constraint:
//!
//! ```text
//! [D; C' A] dx + [E; C' B] du = [e; d']
//! ```
//!
//! The minimum-norm solution splits every admissible input into a
//! constraint-restoring part `eps + U dx` and a free part confined to the
//! kernel of `[E; C' B]` by the projector `P`. Substituting
//! `du = eps + U dx + P w` into the stage turns the constrained LQ problem
//! into an unconstrained one in `w` whose input Hessian is singular.

use nalgebra::{DMatrix, DVector};

use crate::error::{DeficientMatrix, Error, RelativeDegreeViolation, Result};
use crate::linalg::{self, rank_factorize, symmetrize, vstack, vstack_vec};
use crate::rollout::{ConstraintStage, LqApproximation, LqStage};

/// Previewed constraint system of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewStack {
    /// `C_{n+1} B_n`.
    pub preview_u: DMatrix<f64>,
    /// `C_{n+1} A_n`.
    pub preview_x: DMatrix<f64>,
    /// `[E; C_{n+1} B_n]`.
    pub lhs_u: DMatrix<f64>,
    /// `[D; C_{n+1} A_n]`.
    pub lhs_x: DMatrix<f64>,
    /// `[e; d_{n+1}]`.
    pub rhs: DVector<f64>,
    pub state_input_rows: usize,
}

impl PreviewStack {
    pub fn rows(&self) -> usize {
        self.rhs.len()
    }
}

pub fn build_preview_stack(
    lq: &LqStage,
    cons: &ConstraintStage,
    next_state_jac: &DMatrix<f64>,
    next_state_rhs: &DVector<f64>,
) -> PreviewStack {
    let preview_u = next_state_jac * &lq.b;
    let preview_x = next_state_jac * &lq.a;
    PreviewStack {
        lhs_u: vstack(&cons.input_jac_u, &preview_u),
        lhs_x: vstack(&cons.input_jac_x, &preview_x),
        rhs: vstack_vec(&cons.input_rhs, next_state_rhs),
        state_input_rows: cons.input_rhs.len(),
        preview_u,
        preview_x,
    }
}

/// Both `C_{n+1} B_n` and `C_{n+1}` must have full row rank.
pub fn check_relative_degree(
    preview_u: &DMatrix<f64>,
    next_state_jac: &DMatrix<f64>,
    step: usize,
    rank_tol: f64,
) -> std::result::Result<(), RelativeDegreeViolation> {
    let checks = [
        (next_state_jac, DeficientMatrix::NextStateConstraint),
        (preview_u, DeficientMatrix::InputPreview),
    ];
    for (mat, which) in checks {
        if mat.nrows() == 0 {
            continue;
        }
        // A non-finite matrix has no meaningful rank; report it as rank zero.
        let rank = rank_factorize(mat, rank_tol).map_or(0, |f| f.rank);
        if rank < mat.nrows() {
            return Err(RelativeDegreeViolation {
                step,
                matrix: which,
                rows: mat.nrows(),
                rank,
            });
        }
    }
    Ok(())
}

/// Factorization products of one stacked system.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStage {
    pub stack: PreviewStack,
    /// Minimum-norm restoring feedforward `[E; M]^+ [e; d']`.
    pub feedforward: DVector<f64>,
    /// Restoring feedback `-[E; M]^+ [D; N]`.
    pub feedback: DMatrix<f64>,
    /// Orthogonal projector onto the kernel of `[E; M]`.
    pub projector: DMatrix<f64>,
    pub rank: usize,
    /// `|[E; M] eps - rhs|`; nonzero only for an inconsistent stack.
    pub residual: f64,
}

impl ProjectionStage {
    pub fn nullity(&self) -> usize {
        self.projector.nrows() - self.rank
    }

    /// `eps + U dx + P w`.
    pub fn input(&self, dx: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.feedforward + &self.feedback * dx + &self.projector * w
    }
}

pub fn compute_projection(
    stack: PreviewStack,
    step: usize,
    rank_tol: f64,
) -> Result<ProjectionStage> {
    let p = stack.lhs_u.ncols();
    let fact = rank_factorize(&stack.lhs_u, rank_tol).map_err(|e| e.at_step(step))?;
    if !fact.is_full_row_rank() {
        return Err(Error::RankCollapse {
            step,
            rows: stack.rows(),
            rank: fact.rank,
        });
    }
    if stack.rows() == 0 {
        return Ok(ProjectionStage {
            feedforward: DVector::zeros(p),
            feedback: DMatrix::zeros(p, stack.lhs_x.ncols()),
            projector: DMatrix::identity(p, p),
            rank: 0,
            residual: 0.0,
            stack,
        });
    }
    let rhs = DMatrix::from_column_slice(stack.rows(), 1, stack.rhs.as_slice());
    let feedforward = fact.solve_min_norm(&rhs).column(0).into_owned();
    let feedback = -fact.solve_min_norm(&stack.lhs_x);
    let projector = symmetrize(&fact.nullspace_projector());
    let residual = (&stack.lhs_u * &feedforward - &stack.rhs).norm();
    if residual > 1e-8 * (1.0 + stack.rhs.norm()) {
        log::warn!(
            "step {step}: stacked constraint is inconsistent, least-squares residual {residual:e}"
        );
    }
    Ok(ProjectionStage {
        stack,
        feedforward,
        feedback,
        projector,
        rank: fact.rank,
        residual,
    })
}

/// Projected stage: dynamics `dx' = A dx + B w + g` and the stage cost in
/// `(dx, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedStage {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    pub grad_u: DVector<f64>,
    pub hess_uu: DMatrix<f64>,
    pub hess_ux: DMatrix<f64>,
    /// `|B|` and `|Q_ux + R U|` before projection. Kernel directions of the
    /// projected terms carry roundoff of these sizes times machine epsilon.
    pub unprojected_b_norm: f64,
    pub unprojected_cross_norm: f64,
}

impl ProjectedStage {
    pub fn cost(&self, dx: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.value
            + dx.dot(&self.grad_x)
            + w.dot(&self.grad_u)
            + 0.5 * dx.dot(&(&self.hess_xx * dx))
            + 0.5 * w.dot(&(&self.hess_uu * w))
            + w.dot(&(&self.hess_ux * dx))
    }

    pub fn next_state(&self, dx: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * dx + &self.b * w + &self.offset
    }
}

pub fn project_stage(lq: &LqStage, ps: &ProjectionStage) -> ProjectedStage {
    let eps = &ps.feedforward;
    let u = &ps.feedback;
    let proj = &ps.projector;
    let r_eps = &lq.hess_uu * eps;
    let r_u = &lq.hess_uu * u;
    let u_t_p = u.tr_mul(&lq.hess_ux);

    ProjectedStage {
        a: &lq.a + &lq.b * u,
        b: &lq.b * proj,
        offset: &lq.b * eps,
        value: lq.value + eps.dot(&lq.grad_u) + 0.5 * eps.dot(&r_eps),
        grad_x: &lq.grad_x + u.tr_mul(&lq.grad_u) + lq.hess_ux.tr_mul(eps) + u.tr_mul(&r_eps),
        hess_xx: symmetrize(&(&lq.hess_xx + u.tr_mul(&r_u) + &u_t_p + u_t_p.transpose())),
        grad_u: proj * (&lq.grad_u + r_eps),
        hess_uu: symmetrize(&(proj * &lq.hess_uu * proj)),
        unprojected_b_norm: lq.b.norm(),
        unprojected_cross_norm: (&lq.hess_ux + &r_u).norm(),
        hess_ux: proj * (&lq.hess_ux + r_u),
    }
}

/// Build, check and factorize the stacked constraint of every step.
pub fn project_all(lq: &LqApproximation, rank_tol: f64) -> Result<Vec<ProjectionStage>> {
    if let Some(c0) = lq.constraints.first() {
        let r = c0.state_rhs.amax();
        if r > 1e-8 {
            log::warn!(
                "initial state violates the pure-state constraint by {r:e}; it cannot be corrected"
            );
        }
    }
    (0..lq.horizon())
        .map(|n| {
            let (next_jac, next_rhs) = lq.next_state_constraint(n);
            let stack = build_preview_stack(&lq.stages[n], &lq.constraints[n], next_jac, next_rhs);
            check_relative_degree(&stack.preview_u, next_jac, n, rank_tol)
                .map_err(Error::RelativeDegree)?;
            compute_projection(stack, n, rank_tol)
        })
        .collect()
}

/// Stack, check and factorize a single step given its parts.
pub fn projection_from_parts(
    lq: &LqStage,
    cons: &ConstraintStage,
    next_state_jac: &DMatrix<f64>,
    next_state_rhs: &DVector<f64>,
    step: usize,
) -> Result<ProjectionStage> {
    let stack = build_preview_stack(lq, cons, next_state_jac, next_state_rhs);
    check_relative_degree(
        &stack.preview_u,
        next_state_jac,
        step,
        linalg::DEFAULT_RANK_TOL,
    )
    .map_err(Error::RelativeDegree)?;
    compute_projection(stack, step, linalg::DEFAULT_RANK_TOL)
}
