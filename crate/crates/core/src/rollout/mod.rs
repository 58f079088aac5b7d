//! Forward simulation and the per-step linear-quadratic approximation.

pub mod finite_diff;
pub mod integrator;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, min_symmetric_eigenvalue, symmetrize};
use crate::problem::{Ocp, Trajectory};
use crate::riccati::Policy;

pub use finite_diff::finite_difference_jacobian;
pub use integrator::{
    integrate_step_with_sensitivities, ContinuousModelAdapter, Integrator, VectorField,
};

/// Eigenvalues of the state Hessian may dip this far below zero (relative).
const PSD_TOL: f64 = 1e-8;

/// Linearized dynamics and quadratized cost at one step, in deviation
/// coordinates about the nominal pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LqStage {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Cost at the nominal point.
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    pub grad_u: DVector<f64>,
    pub hess_uu: DMatrix<f64>,
    /// Shape `p x m`.
    pub hess_ux: DMatrix<f64>,
}

impl LqStage {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Quadratic model of the stage cost at a deviation.
    pub fn cost(&self, dx: &DVector<f64>, du: &DVector<f64>) -> f64 {
        self.value
            + dx.dot(&self.grad_x)
            + du.dot(&self.grad_u)
            + 0.5 * dx.dot(&(&self.hess_xx * dx))
            + 0.5 * du.dot(&(&self.hess_uu * du))
            + du.dot(&(&self.hess_ux * dx))
    }
}

/// Linearized constraints at one step:
/// `D dx + E du = e` (state-input) and `C dx = d` (pure state).
///
/// Residual signs are chosen so that the right-hand sides are the negated raw
/// constraint values at the nominal point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintStage {
    pub input_jac_x: DMatrix<f64>,
    pub input_jac_u: DMatrix<f64>,
    pub input_rhs: DVector<f64>,
    pub state_jac: DMatrix<f64>,
    pub state_rhs: DVector<f64>,
}

impl ConstraintStage {
    pub fn empty(m: usize, p: usize) -> Self {
        Self {
            input_jac_x: DMatrix::zeros(0, m),
            input_jac_u: DMatrix::zeros(0, p),
            input_rhs: DVector::zeros(0),
            state_jac: DMatrix::zeros(0, m),
            state_rhs: DVector::zeros(0),
        }
    }
}

/// Terminal cost expansion and terminal constraint linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalStage {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub state_jac: DMatrix<f64>,
    pub state_rhs: DVector<f64>,
}

impl TerminalStage {
    pub fn cost(&self, dx: &DVector<f64>) -> f64 {
        self.value + dx.dot(&self.grad) + 0.5 * dx.dot(&(&self.hess * dx))
    }
}

#[derive(Debug, Clone)]
pub struct LqApproximation {
    pub stages: Vec<LqStage>,
    pub constraints: Vec<ConstraintStage>,
    pub terminal: TerminalStage,
}

impl LqApproximation {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// Pure-state block that step `n` must satisfy one step ahead.
    pub fn next_state_constraint(&self, n: usize) -> (&DMatrix<f64>, &DVector<f64>) {
        if n + 1 < self.horizon() {
            let c = &self.constraints[n + 1];
            (&c.state_jac, &c.state_rhs)
        } else {
            (&self.terminal.state_jac, &self.terminal.state_rhs)
        }
    }
}

/// Simulate the nonlinear dynamics under `policy` from `ocp.x0`.
pub fn rollout_policy(ocp: &Ocp, policy: &Policy) -> Result<Trajectory> {
    if policy.horizon() != ocp.horizon {
        return Err(Error::Definition(format!(
            "policy horizon {} differs from problem horizon {}",
            policy.horizon(),
            ocp.horizon
        )));
    }
    let mut states = Vec::with_capacity(ocp.horizon + 1);
    let mut inputs = Vec::with_capacity(ocp.horizon);
    let mut x = ocp.x0.clone();
    for n in 0..ocp.horizon {
        let u = policy.apply(n, &x);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n });
        }
        let next = ocp.dynamics.step(&x, &u, n);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n + 1 });
        }
        states.push(std::mem::replace(&mut x, next));
        inputs.push(u);
    }
    states.push(x);
    Ok(Trajectory { states, inputs })
}

fn ensure_finite<'a>(
    step: usize,
    what: &str,
    mut values: impl Iterator<Item = &'a f64>,
) -> Result<()> {
    if values.any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            step,
            what: format!("non-finite {what}"),
        });
    }
    Ok(())
}

fn check_weights(step: usize, hess_xx: &DMatrix<f64>, hess_uu: &DMatrix<f64>) -> Result<()> {
    if hess_uu.nrows() > 0 && hess_uu.clone().cholesky().is_none() {
        return Err(Error::Definition(format!(
            "input Hessian at step {step} is not positive definite"
        )));
    }
    let min_eig = min_symmetric_eigenvalue(hess_xx);
    if min_eig < -PSD_TOL * hess_xx.amax().max(1.0) {
        return Err(Error::Definition(format!(
            "state Hessian at step {step} is indefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

fn state_constraint_at(ocp: &Ocp, x: &DVector<f64>, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let m = ocp.state_dim();
    let family = if n == ocp.horizon {
        &ocp.terminal_constraint
    } else {
        &ocp.state_constraint
    };
    match family {
        Some(c) if c.dim(n) > 0 => (c.jacobian(x, n), -c.value(x, n)),
        _ => (DMatrix::zeros(0, m), DVector::zeros(0)),
    }
}

/// Taylor-expand dynamics, cost and constraints about every nominal pair.
pub fn linearize_and_quadratize(
    ocp: &Ocp,
    traj: &Trajectory,
    rank_tol: f64,
) -> Result<LqApproximation> {
    traj.check_against(ocp)?;
    let (m, p) = (ocp.state_dim(), ocp.input_dim());
    let mut stages = Vec::with_capacity(ocp.horizon);
    let mut constraints = Vec::with_capacity(ocp.horizon);

    for (n, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate() {
        let (_, a, b) = ocp.dynamics.step_with_jacobians(x, u, n);
        ensure_finite(n, "dynamics Jacobian", a.iter().chain(b.iter()))?;

        let c = ocp.stage_cost.expansion(x, u, n);
        let hess_xx = symmetrize(&c.hess_xx);
        let hess_uu = symmetrize(&c.hess_uu);
        ensure_finite(
            n,
            "cost expansion",
            std::iter::once(&c.value)
                .chain(c.grad_x.iter())
                .chain(c.grad_u.iter())
                .chain(hess_xx.iter())
                .chain(hess_uu.iter())
                .chain(c.hess_ux.iter()),
        )?;
        check_weights(n, &hess_xx, &hess_uu)?;
        stages.push(LqStage {
            a,
            b,
            value: c.value,
            grad_x: c.grad_x,
            hess_xx,
            grad_u: c.grad_u,
            hess_uu,
            hess_ux: c.hess_ux,
        });

        let mut stage = ConstraintStage::empty(m, p);
        let (state_jac, state_rhs) = state_constraint_at(ocp, x, n);
        ensure_finite(
            n,
            "state constraint",
            state_jac.iter().chain(state_rhs.iter()),
        )?;
        stage.state_jac = state_jac;
        stage.state_rhs = state_rhs;

        if let Some(g1) = ocp.state_input_constraint.as_ref().filter(|g| g.dim(n) > 0) {
            let (d, e) = g1.jacobians(x, u, n);
            let rhs = -g1.value(x, u, n);
            ensure_finite(
                n,
                "state-input constraint",
                d.iter().chain(e.iter()).chain(rhs.iter()),
            )?;
            let split = linalg::split_rank_deficient_constraint(&d, &e, &rhs, rank_tol)
                .map_err(|err| err.at_step(n))?;
            stage.input_jac_x = split.d_x;
            stage.input_jac_u = split.e_u;
            stage.input_rhs = split.rhs;
            if split.c_x.nrows() > 0 {
                log::debug!(
                    "step {n}: {} state-input rows reduce to pure-state rows",
                    split.c_x.nrows()
                );
                let jac = linalg::vstack(&stage.state_jac, &split.c_x);
                let rhs = linalg::vstack_vec(&stage.state_rhs, &split.c_rhs);
                let (jac, rhs) =
                    linalg::reduce_rows(&jac, &rhs, rank_tol).map_err(|err| err.at_step(n))?;
                stage.state_jac = jac;
                stage.state_rhs = rhs;
            }
        }
        constraints.push(stage);
    }

    let x_final = traj.final_state();
    let t = ocp.terminal_cost.expansion(x_final);
    let (state_jac, state_rhs) = state_constraint_at(ocp, x_final, ocp.horizon);
    let hess = symmetrize(&t.hess);
    ensure_finite(
        ocp.horizon,
        "terminal expansion",
        std::iter::once(&t.value)
            .chain(t.grad.iter())
            .chain(hess.iter())
            .chain(state_jac.iter())
            .chain(state_rhs.iter()),
    )?;
    let min_eig = min_symmetric_eigenvalue(&hess);
    if min_eig < -PSD_TOL * hess.amax().max(1.0) {
        return Err(Error::Definition(format!(
            "terminal Hessian is indefinite (eigenvalue {min_eig:e})"
        )));
    }

    Ok(LqApproximation {
        stages,
        constraints,
        terminal: TerminalStage {
            value: t.value,
            grad: t.grad,
            hess,
            state_jac,
            state_rhs,
        },
    })
}
