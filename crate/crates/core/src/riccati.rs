//! Backward Riccati sweep for the projected (singular) LQ problem and the
//! resulting affine feedback policy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result, SingularCondition, SingularConditionViolation};
use crate::linalg::{min_symmetric_eigenvalue, rank_factorize, symmetrize};
use crate::problem::Trajectory;
use crate::projection::{ProjectedStage, ProjectionStage};
use crate::rollout::TerminalStage;

/// Negative-eigenvalue allowance on the Hessian, relative to its scale.
pub const HESSIAN_PSD_TOL: f64 = 1e-8;
/// Allowed `|G' v|` for unit kernel vectors `v` of `H`, relative to scale.
pub const KERNEL_TOL: f64 = 1e-7;
/// Negative-eigenvalue allowance on the value Hessian.
pub const VALUE_PSD_TOL: f64 = 1e-6;
/// Kernel residuals up to this many machine epsilons of the unprojected
/// term sizes are projection roundoff, not a violation.
pub const ROUNDOFF_FACTOR: f64 = 1e3;

/// Time-indexed affine feedback law `u = ff_n + K_n (x - x_ref_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub feedforward: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    pub reference: Vec<DVector<f64>>,
}

impl Policy {
    pub fn horizon(&self) -> usize {
        self.feedforward.len()
    }

    pub fn apply(&self, n: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.feedforward[n] + &self.gains[n] * (x - &self.reference[n])
    }

    /// Fixed input sequence, no feedback.
    pub fn open_loop(inputs: Vec<DVector<f64>>, state_dim: usize) -> Self {
        let n = inputs.len();
        let p = inputs.first().map_or(0, |u| u.len());
        Self {
            feedforward: inputs,
            gains: vec![DMatrix::zeros(p, state_dim); n],
            reference: vec![DVector::zeros(state_dim); n],
        }
    }

    /// `u = K x` at every step.
    pub fn linear_feedback(gain: DMatrix<f64>, horizon: usize) -> Self {
        Self::affine(
            DVector::zeros(gain.nrows()),
            gain.clone(),
            DVector::zeros(gain.ncols()),
            horizon,
        )
    }

    /// `u = u_ss + K (x - x_ref)` at every step.
    pub fn affine(
        u_ss: DVector<f64>,
        gain: DMatrix<f64>,
        x_ref: DVector<f64>,
        horizon: usize,
    ) -> Self {
        Self {
            feedforward: vec![u_ss; horizon],
            gains: vec![gain; horizon],
            reference: vec![x_ref; horizon],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.feedforward
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.gains.iter().all(|k| k.iter().all(|x| x.is_finite()))
    }
}

/// Quadratic value function `V(dx) = c + g' dx + 1/2 dx' S dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub hess: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub constant: f64,
}

impl ValueFunction {
    pub fn eval(&self, dx: &DVector<f64>) -> f64 {
        self.constant + self.grad.dot(dx) + 0.5 * dx.dot(&(&self.hess * dx))
    }
}

/// Value function at step `n` plus the step's optimal-update quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueStage {
    pub value: ValueFunction,
    /// `h = r + B'(s' + S' g)`.
    pub grad_u: DVector<f64>,
    /// `G = P + B' S' A`.
    pub cross: DMatrix<f64>,
    /// `H = R + B' S' B`.
    pub hessian: DMatrix<f64>,
    /// `l = -H^+ h`.
    pub feedforward: DVector<f64>,
    /// `L = -H^+ G`.
    pub gain: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub stages: Vec<ValueStage>,
    pub terminal: ValueFunction,
    /// Number of steps at which the admissibility conditions were checked.
    pub checked_steps: usize,
}

impl BackwardSolution {
    pub fn value_at(&self, n: usize) -> &ValueFunction {
        self.stages.get(n).map_or(&self.terminal, |s| &s.value)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    pub rank_tol: f64,
    /// Check admissibility and value PSD every `check_every` steps
    /// (`1` = every step, `0` = never).
    pub check_every: usize,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            rank_tol: crate::linalg::DEFAULT_RANK_TOL,
            check_every: 1,
        }
    }
}

/// Admissibility of a singular step given its Hessian and cross term:
/// `H >= 0` and `ker H` contained in `ker G'`. `roundoff_scale` bounds the
/// size of the terms `G` was assembled from; pass `0` for exact data.
pub fn check_hessian_conditions(
    hessian: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    roundoff_scale: f64,
    step: usize,
    rank_tol: f64,
) -> std::result::Result<(), SingularConditionViolation> {
    if hessian.is_empty() {
        return Ok(());
    }
    let eig = SymmetricEigen::new(symmetrize(hessian));
    let lam_max = eig.eigenvalues.amax();
    let scale = lam_max + cross.norm();
    if scale == 0.0 {
        return Ok(());
    }
    let lam_min = eig.eigenvalues.min();
    if lam_min < -HESSIAN_PSD_TOL * scale {
        return Err(SingularConditionViolation {
            step,
            condition: SingularCondition::HessianNotPsd,
            value: lam_min,
        });
    }
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > rank_tol * lam_max {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        let residual = cross.tr_mul(&v).norm();
        if residual > KERNEL_TOL * scale + ROUNDOFF_FACTOR * f64::EPSILON * roundoff_scale {
            return Err(SingularConditionViolation {
                step,
                condition: SingularCondition::KernelNotContained,
                value: residual,
            });
        }
    }
    Ok(())
}

struct StepTerms {
    hessian: DMatrix<f64>,
    cross: DMatrix<f64>,
    grad_u: DVector<f64>,
    roundoff_scale: f64,
}

fn step_terms(stage: &ProjectedStage, next: &ValueFunction) -> StepTerms {
    let s_b = &next.hess * &stage.b;
    StepTerms {
        hessian: symmetrize(&(&stage.hess_uu + stage.b.tr_mul(&s_b))),
        cross: &stage.hess_ux + s_b.tr_mul(&stage.a),
        grad_u: &stage.grad_u + stage.b.tr_mul(&(&next.grad + &next.hess * &stage.offset)),
        roundoff_scale: stage.unprojected_cross_norm
            + next.hess.norm() * stage.unprojected_b_norm * stage.a.norm(),
    }
}

/// Admissibility of one projected stage against the next value Hessian.
pub fn check_singular_conditions(
    stage: &ProjectedStage,
    next: &ValueFunction,
    step: usize,
    rank_tol: f64,
) -> std::result::Result<(), SingularConditionViolation> {
    let t = step_terms(stage, next);
    check_hessian_conditions(&t.hessian, &t.cross, t.roundoff_scale, step, rank_tol)
}

/// Sweep from the terminal condition `S_N = Q_N, s_N = q_N, c_N = q_N` back
/// to step zero.
pub fn backward_pass(
    stages: &[ProjectedStage],
    terminal: &TerminalStage,
    opts: &BackwardOptions,
) -> Result<BackwardSolution> {
    let terminal = ValueFunction {
        hess: terminal.hess.clone(),
        grad: terminal.grad.clone(),
        constant: terminal.value,
    };
    let mut out: Vec<ValueStage> = Vec::with_capacity(stages.len());
    let mut checked_steps = 0;

    for (n, st) in stages.iter().enumerate().rev() {
        let next = out.last().map_or(&terminal, |s| &s.value);
        let StepTerms {
            hessian,
            cross,
            grad_u,
            roundoff_scale,
        } = step_terms(st, next);
        let check = opts.check_every > 0 && n % opts.check_every == 0;
        if check {
            check_hessian_conditions(&hessian, &cross, roundoff_scale, n, opts.rank_tol)
                .map_err(Error::Admissibility)?;
        }

        let fact = rank_factorize(&hessian, opts.rank_tol).map_err(|e| e.at_step(n))?;
        let rhs = DMatrix::from_column_slice(grad_u.len(), 1, grad_u.as_slice());
        let feedforward = -fact.solve_min_norm(&rhs).column(0).into_owned();
        let gain = -fact.solve_min_norm(&cross);

        let next_grad = &next.grad + &next.hess * &st.offset;
        let h_l = &hessian * &feedforward;
        let hess = symmetrize(
            &(&st.hess_xx + st.a.tr_mul(&(&next.hess * &st.a)) - gain.tr_mul(&(&hessian * &gain))),
        );
        let grad = &st.grad_x
            + st.a.tr_mul(&next_grad)
            + cross.tr_mul(&feedforward)
            + gain.tr_mul(&(&grad_u + &h_l));
        let constant = st.value
            + next.constant
            + st.offset.dot(&next.grad)
            + 0.5 * st.offset.dot(&(&next.hess * &st.offset))
            + feedforward.dot(&(&grad_u + h_l * 0.5));

        if hess.iter().chain(grad.iter()).any(|v| !v.is_finite()) || !constant.is_finite() {
            return Err(Error::Numerical {
                step: n,
                what: "non-finite value function".into(),
            });
        }
        if check {
            checked_steps += 1;
            let lam = min_symmetric_eigenvalue(&hess);
            if lam < -VALUE_PSD_TOL * hess.amax().max(1.0) {
                return Err(Error::Numerical {
                    step: n,
                    what: format!("value Hessian is indefinite (eigenvalue {lam:e})"),
                });
            }
        }

        out.push(ValueStage {
            value: ValueFunction {
                hess,
                grad,
                constant,
            },
            grad_u,
            cross,
            hessian,
            feedforward,
            gain,
        });
    }
    out.reverse();
    Ok(BackwardSolution {
        stages: out,
        terminal,
        checked_steps,
    })
}

/// `u_n = u_hat_n + alpha (eps_n + P_n l_n) + (U_n + P_n L_n)(x - x_hat_n)`.
pub fn assemble_policy(
    projections: &[ProjectionStage],
    values: &BackwardSolution,
    nominal: &Trajectory,
    alpha: f64,
) -> Policy {
    let n = projections.len();
    let mut feedforward = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    for (k, (ps, vs)) in projections.iter().zip(&values.stages).enumerate() {
        let step = &ps.feedforward + &ps.projector * &vs.feedforward;
        feedforward.push(&nominal.inputs[k] + step * alpha);
        gains.push(&ps.feedback + &ps.projector * &vs.gain);
    }
    Policy {
        feedforward,
        gains,
        reference: nominal.states[..n].to_vec(),
    }
}
