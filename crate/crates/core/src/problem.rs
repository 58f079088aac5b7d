//! Constrained nonlinear optimal control problems and raw trajectory
//! evaluation (cost, constraint violation, ISE).
//!
//! A problem is assembled from trait objects: one for the discrete dynamics,
//! one each for the stage and terminal cost, and up to three equality
//! constraint families (state-input, pure state, terminal state). Every
//! component has a finite-difference fallback for its derivatives, so a
//! closure-only problem is already solvable; analytic derivatives are used
//! whenever a component overrides the default methods.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rollout::finite_diff::{
    finite_difference_gradient, finite_difference_hessian, finite_difference_jacobian, join, split,
    FD_HESSIAN_STEP, FD_STEP,
};

/// Cost values below this are treated as a violated non-negativity contract.
const NEGATIVE_COST_TOL: f64 = 1e-12;

pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// `x_{n+1} = f(x_n, u_n, n)`.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> DVector<f64>;

    /// Next state together with `df/dx` and `df/du`.
    fn step_with_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        n: usize,
    ) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let m = self.state_dim();
        let jac = finite_difference_jacobian(
            |z| {
                let (x, u) = split(z, m);
                self.step(&x, &u, n)
            },
            &join(x, u),
            FD_STEP,
        );
        (
            self.step(x, u, n),
            jac.columns(0, m).into_owned(),
            jac.columns(m, jac.ncols() - m).into_owned(),
        )
    }
}

/// Second-order Taylor coefficients of a stage cost.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCostExpansion {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub grad_u: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    pub hess_uu: DMatrix<f64>,
    /// `d^2 L / du dx`, shape `p x m`.
    pub hess_ux: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCostExpansion {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub trait StageCost: Send + Sync {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> f64;

    fn expansion(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> StageCostExpansion {
        let m = x.len();
        let z = join(x, u);
        let f = |z: &DVector<f64>| {
            let (x, u) = split(z, m);
            self.value(&x, &u, n)
        };
        let grad = finite_difference_gradient(f, &z, FD_STEP);
        let hess = finite_difference_hessian(f, &z, FD_HESSIAN_STEP);
        let p = u.len();
        StageCostExpansion {
            value: self.value(x, u, n),
            grad_x: grad.rows(0, m).into_owned(),
            grad_u: grad.rows(m, p).into_owned(),
            hess_xx: hess.view((0, 0), (m, m)).into_owned(),
            hess_uu: hess.view((m, m), (p, p)).into_owned(),
            hess_ux: hess.view((m, 0), (p, m)).into_owned(),
        }
    }
}

pub trait TerminalCost: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;

    fn expansion(&self, x: &DVector<f64>) -> TerminalCostExpansion {
        let f = |z: &DVector<f64>| self.value(z);
        TerminalCostExpansion {
            value: self.value(x),
            grad: finite_difference_gradient(f, x, FD_STEP),
            hess: finite_difference_hessian(f, x, FD_HESSIAN_STEP),
        }
    }
}

/// `g1(x, u, n) = 0`.
pub trait StateInputConstraint: Send + Sync {
    fn dim(&self, n: usize) -> usize;
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> DVector<f64>;

    /// `(dg1/dx, dg1/du)`.
    fn jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        n: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = x.len();
        let jac = finite_difference_jacobian(
            |z| {
                let (x, u) = split(z, m);
                self.value(&x, &u, n)
            },
            &join(x, u),
            FD_STEP,
        );
        (
            jac.columns(0, m).into_owned(),
            jac.columns(m, u.len()).into_owned(),
        )
    }
}

/// `g2(x, n) = 0`; also used for the terminal constraint, evaluated at `n = N`.
pub trait StateConstraint: Send + Sync {
    fn dim(&self, n: usize) -> usize;
    fn value(&self, x: &DVector<f64>, n: usize) -> DVector<f64>;

    fn jacobian(&self, x: &DVector<f64>, n: usize) -> DMatrix<f64> {
        let jac = finite_difference_jacobian(|z| self.value(z, n), x, FD_STEP);
        if jac.nrows() == 0 {
            DMatrix::zeros(0, x.len())
        } else {
            jac
        }
    }
}

/// A discrete-time, finite-horizon, equality-constrained optimal control
/// problem. Immutable once built; cheap to clone.
#[derive(Clone)]
pub struct Ocp {
    pub dynamics: Arc<dyn Dynamics>,
    pub stage_cost: Arc<dyn StageCost>,
    pub terminal_cost: Arc<dyn TerminalCost>,
    pub state_input_constraint: Option<Arc<dyn StateInputConstraint>>,
    pub state_constraint: Option<Arc<dyn StateConstraint>>,
    pub terminal_constraint: Option<Arc<dyn StateConstraint>>,
    pub horizon: usize,
    pub x0: DVector<f64>,
    /// Sampling time; scales stage violations in the ISE.
    pub dt: f64,
}

impl std::fmt::Debug for Ocp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ocp")
            .field("state_dim", &self.state_dim())
            .field("input_dim", &self.input_dim())
            .field("horizon", &self.horizon)
            .field("dt", &self.dt)
            .field("x0", &self.x0.as_slice())
            .finish_non_exhaustive()
    }
}

impl Ocp {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        stage_cost: Arc<dyn StageCost>,
        terminal_cost: Arc<dyn TerminalCost>,
        horizon: usize,
        x0: DVector<f64>,
        dt: f64,
    ) -> Self {
        Self {
            dynamics,
            stage_cost,
            terminal_cost,
            state_input_constraint: None,
            state_constraint: None,
            terminal_constraint: None,
            horizon,
            x0,
            dt,
        }
    }

    pub fn with_state_input_constraint(mut self, c: Arc<dyn StateInputConstraint>) -> Self {
        self.state_input_constraint = Some(c);
        self
    }

    pub fn with_state_constraint(mut self, c: Arc<dyn StateConstraint>) -> Self {
        self.state_constraint = Some(c);
        self
    }

    pub fn with_terminal_constraint(mut self, c: Arc<dyn StateConstraint>) -> Self {
        self.terminal_constraint = Some(c);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn state_input_dim(&self, n: usize) -> usize {
        self.state_input_constraint.as_ref().map_or(0, |c| c.dim(n))
    }

    /// Pure-state constraint rows at step `n`; the terminal family at `n = N`.
    pub fn state_constraint_dim(&self, n: usize) -> usize {
        if n == self.horizon {
            self.terminal_constraint
                .as_ref()
                .map_or(0, |c| c.dim(self.horizon))
        } else {
            self.state_constraint.as_ref().map_or(0, |c| c.dim(n))
        }
    }

    pub fn is_unconstrained(&self) -> bool {
        (0..self.horizon).all(|n| self.state_input_dim(n) == 0)
            && (0..=self.horizon).all(|n| self.state_constraint_dim(n) == 0)
    }

    /// Structural checks that do not need a trajectory.
    pub fn validate(&self) -> Result<()> {
        let (m, p) = (self.state_dim(), self.input_dim());
        if self.horizon == 0 {
            return Err(Error::Definition(
                "horizon must be at least one step".into(),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Definition(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.x0.len() != m {
            return Err(Error::Definition(format!(
                "x0 has {} entries, dynamics expect {m}",
                self.x0.len()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Definition("x0 is not finite".into()));
        }
        for n in 0..self.horizon {
            let rows = self.state_input_dim(n) + self.state_constraint_dim(n + 1);
            if rows > p {
                return Err(Error::Definition(format!(
                    "step {n} is over-constrained: {rows} constraint rows for {p} inputs"
                )));
            }
        }
        Ok(())
    }

    /// Residual of the pure-state constraint at the (fixed) initial state.
    pub fn initial_state_residual(&self) -> DVector<f64> {
        if self.horizon == 0 {
            return DVector::zeros(0);
        }
        self.state_constraint
            .as_ref()
            .map_or_else(|| DVector::zeros(0), |c| c.value(&self.x0, 0))
    }
}

/// Nominal state and input sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != inputs.len() + 1 {
            return Err(Error::Definition(format!(
                "trajectory has {} states for {} inputs",
                states.len(),
                inputs.len()
            )));
        }
        Ok(Self { states, inputs })
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }

    /// Euclidean distance over all stacked states and inputs.
    pub fn distance(&self, other: &Trajectory) -> f64 {
        let sx: f64 = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        let su: f64 = self
            .inputs
            .iter()
            .zip(&other.inputs)
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        (sx + su).sqrt()
    }

    pub fn norm(&self) -> f64 {
        let sx: f64 = self.states.iter().map(|v| v.norm_squared()).sum();
        let su: f64 = self.inputs.iter().map(|v| v.norm_squared()).sum();
        (sx + su).sqrt()
    }

    pub(crate) fn check_against(&self, ocp: &Ocp) -> Result<()> {
        if self.horizon() != ocp.horizon {
            return Err(Error::Definition(format!(
                "trajectory horizon {} differs from problem horizon {}",
                self.horizon(),
                ocp.horizon
            )));
        }
        let (m, p) = (ocp.state_dim(), ocp.input_dim());
        if let Some(n) = self.states.iter().position(|x| x.len() != m) {
            return Err(Error::Definition(format!("state {n} has wrong dimension")));
        }
        if let Some(n) = self.inputs.iter().position(|u| u.len() != p) {
            return Err(Error::Definition(format!("input {n} has wrong dimension")));
        }
        Ok(())
    }
}

fn checked_cost(value: f64, step: usize) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Numerical {
            step,
            what: format!("cost evaluated to {value}"),
        });
    }
    if value < -NEGATIVE_COST_TOL {
        return Err(Error::Definition(format!(
            "cost at step {step} is negative ({value:e})"
        )));
    }
    Ok(value)
}

/// `Phi(x_N) + sum_n L_n(x_n, u_n, n)`.
pub fn evaluate_total_cost(ocp: &Ocp, traj: &Trajectory) -> Result<f64> {
    traj.check_against(ocp)?;
    let mut total = 0.0;
    for (n, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate() {
        total += checked_cost(ocp.stage_cost.value(x, u, n), n)?;
    }
    total += checked_cost(ocp.terminal_cost.value(traj.final_state()), ocp.horizon)?;
    Ok(total)
}

/// Raw constraint values at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepViolation {
    pub state_input: DVector<f64>,
    pub state: DVector<f64>,
}

/// Raw constraint values along a whole trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolations {
    pub stages: Vec<StepViolation>,
    pub terminal: DVector<f64>,
}

impl ConstraintViolations {
    /// `sum_n (|g1|^2 + |g2|^2) dt + |g3|^2`.
    pub fn ise(&self, dt: f64) -> f64 {
        let stage: f64 = self
            .stages
            .iter()
            .map(|s| s.state_input.norm_squared() + s.state.norm_squared())
            .sum();
        stage * dt + self.terminal.norm_squared()
    }

    /// Largest absolute entry per step, terminal last (`N + 1` entries).
    pub fn per_step_max(&self) -> Vec<f64> {
        self.stages
            .iter()
            .map(|s| s.state_input.amax().max(s.state.amax()))
            .chain(std::iter::once(self.terminal.amax()))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.per_step_max().into_iter().fold(0.0, f64::max)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }
}

fn check_finite_vec(
    v: DVector<f64>,
    expected: usize,
    step: usize,
    what: &str,
) -> Result<DVector<f64>> {
    if v.len() != expected {
        return Err(Error::Definition(format!(
            "{what} at step {step} returned {} rows, declared {expected}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical {
            step,
            what: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

pub fn evaluate_constraint_stack(ocp: &Ocp, traj: &Trajectory) -> Result<ConstraintViolations> {
    traj.check_against(ocp)?;
    let mut stages = Vec::with_capacity(ocp.horizon);
    for (n, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate() {
        let state_input = match &ocp.state_input_constraint {
            Some(c) => check_finite_vec(c.value(x, u, n), c.dim(n), n, "state-input constraint")?,
            None => DVector::zeros(0),
        };
        let state = match &ocp.state_constraint {
            Some(c) => check_finite_vec(c.value(x, n), c.dim(n), n, "state constraint")?,
            None => DVector::zeros(0),
        };
        stages.push(StepViolation { state_input, state });
    }
    let terminal = match &ocp.terminal_constraint {
        Some(c) => check_finite_vec(
            c.value(traj.final_state(), ocp.horizon),
            c.dim(ocp.horizon),
            ocp.horizon,
            "terminal constraint",
        )?,
        None => DVector::zeros(0),
    };
    Ok(ConstraintViolations { stages, terminal })
}

pub fn constraint_ise(ocp: &Ocp, traj: &Trajectory) -> Result<f64> {
    Ok(evaluate_constraint_stack(ocp, traj)?.ise(ocp.dt))
}

// ---------------------------------------------------------------------------
// Closure adapters

/// Dynamics from a closure; derivatives by finite differences.
pub struct FnDynamics<F> {
    state_dim: usize,
    input_dim: usize,
    f: F,
}

impl<F> FnDynamics<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>, usize) -> DVector<f64> + Send + Sync,
{
    pub fn new(state_dim: usize, input_dim: usize, f: F) -> Self {
        Self {
            state_dim,
            input_dim,
            f,
        }
    }
}

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>, usize) -> DVector<f64> + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> DVector<f64> {
        (self.f)(x, u, n)
    }
}

pub struct FnStageCost<F>(pub F);

impl<F> StageCost for FnStageCost<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>, usize) -> f64 + Send + Sync,
{
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> f64 {
        (self.0)(x, u, n)
    }
}

pub struct FnTerminalCost<F>(pub F);

impl<F> TerminalCost for FnTerminalCost<F>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
{
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.0)(x)
    }
}

/// State-input constraint with a fixed row count.
pub struct FnStateInputConstraint<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> StateInputConstraint for FnStateInputConstraint<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>, usize) -> DVector<f64> + Send + Sync,
{
    fn dim(&self, _n: usize) -> usize {
        self.dim
    }
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> DVector<f64> {
        (self.f)(x, u, n)
    }
}

/// Pure-state constraint with a fixed row count.
pub struct FnStateConstraint<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> StateConstraint for FnStateConstraint<F>
where
    F: Fn(&DVector<f64>, usize) -> DVector<f64> + Send + Sync,
{
    fn dim(&self, _n: usize) -> usize {
        self.dim
    }
    fn value(&self, x: &DVector<f64>, n: usize) -> DVector<f64> {
        (self.f)(x, n)
    }
}

// ---------------------------------------------------------------------------
// Quadratic costs and affine constraints with exact derivatives

/// `scale * (1/2 dx'Q dx + 1/2 du'R du + du'P dx)` with `dx = x - x_ref`,
/// `du = u - u_ref`.
#[derive(Debug, Clone)]
pub struct QuadraticStageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
    pub scale: f64,
}

impl QuadraticStageCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        let (m, p) = (q.nrows(), r.nrows());
        Self {
            q,
            r,
            p: DMatrix::zeros(p, m),
            x_ref: DVector::zeros(m),
            u_ref: DVector::zeros(p),
            scale: 1.0,
        }
    }

    pub fn with_cross(mut self, p: DMatrix<f64>) -> Self {
        self.p = p;
        self
    }

    pub fn with_reference(mut self, x_ref: DVector<f64>, u_ref: DVector<f64>) -> Self {
        self.x_ref = x_ref;
        self.u_ref = u_ref;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

impl StageCost for QuadraticStageCost {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, _n: usize) -> f64 {
        let dx = x - &self.x_ref;
        let du = u - &self.u_ref;
        self.scale
            * (0.5 * dx.dot(&(&self.q * &dx))
                + 0.5 * du.dot(&(&self.r * &du))
                + du.dot(&(&self.p * &dx)))
    }

    fn expansion(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> StageCostExpansion {
        let dx = x - &self.x_ref;
        let du = u - &self.u_ref;
        StageCostExpansion {
            value: self.value(x, u, n),
            grad_x: (&self.q * &dx + self.p.tr_mul(&du)) * self.scale,
            grad_u: (&self.r * &du + &self.p * &dx) * self.scale,
            hess_xx: &self.q * self.scale,
            hess_uu: &self.r * self.scale,
            hess_ux: &self.p * self.scale,
        }
    }
}

/// `1/2 (x - x_ref)' Q (x - x_ref)`.
#[derive(Debug, Clone)]
pub struct QuadraticTerminalCost {
    pub q: DMatrix<f64>,
    pub x_ref: DVector<f64>,
}

impl TerminalCost for QuadraticTerminalCost {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * dx.dot(&(&self.q * &dx))
    }

    fn expansion(&self, x: &DVector<f64>) -> TerminalCostExpansion {
        let dx = x - &self.x_ref;
        TerminalCostExpansion {
            value: self.value(x),
            grad: &self.q * dx,
            hess: self.q.clone(),
        }
    }
}

/// Offsets indexed by step; the last entry repeats past the end.
fn offset_at(offsets: &[DVector<f64>], n: usize) -> &DVector<f64> {
    &offsets[n.min(offsets.len() - 1)]
}

/// `D x + E u - f_n = 0`.
#[derive(Debug, Clone)]
pub struct LinearStateInputConstraint {
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub offsets: Vec<DVector<f64>>,
}

impl StateInputConstraint for LinearStateInputConstraint {
    fn dim(&self, _n: usize) -> usize {
        self.d.nrows()
    }
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, n: usize) -> DVector<f64> {
        &self.d * x + &self.e * u - offset_at(&self.offsets, n)
    }
    fn jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _n: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.d.clone(), self.e.clone())
    }
}

/// `C x - f_n = 0`.
#[derive(Debug, Clone)]
pub struct LinearStateConstraint {
    pub c: DMatrix<f64>,
    pub offsets: Vec<DVector<f64>>,
}

impl StateConstraint for LinearStateConstraint {
    fn dim(&self, _n: usize) -> usize {
        self.c.nrows()
    }
    fn value(&self, x: &DVector<f64>, n: usize) -> DVector<f64> {
        &self.c * x - offset_at(&self.offsets, n)
    }
    fn jacobian(&self, _x: &DVector<f64>, _n: usize) -> DMatrix<f64> {
        self.c.clone()
    }
}

/// `x_{n+1} = A x_n + B u_n`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, _n: usize) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn step_with_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        n: usize,
    ) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.step(x, u, n), self.a.clone(), self.b.clone())
    }
}
