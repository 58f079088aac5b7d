//! Zero-order-hold discretization of continuous vector fields.
//!
//! The discrete Jacobians are propagated through the same Runge-Kutta stages
//! as the state (the variational equations), so `A` and `B` are the exact
//! derivatives of the discrete step map. A position-level constraint on a
//! second-order system then sees the input after a single step, which a
//! forward-Euler discretization does not provide.

use nalgebra::{DMatrix, DVector};

use super::finite_diff::{finite_difference_jacobian, join, split, FD_STEP};
use crate::error::{Error, Result};
use crate::problem::Dynamics;

/// `x' = f(x, u)`.
pub trait VectorField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `(df/dx, df/du)`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = x.len();
        let jac = finite_difference_jacobian(
            |z| {
                let (x, u) = split(z, m);
                self.eval(&x, &u)
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Explicit Euler. Kept for demonstrating relative-degree loss.
    Euler,
    #[default]
    Rk4,
}

/// Discrete dynamics obtained by integrating a vector field over one sample
/// with the input held constant.
pub struct ContinuousModelAdapter<V> {
    pub field: V,
    pub dt: f64,
    pub integrator: Integrator,
}

impl<V: VectorField> ContinuousModelAdapter<V> {
    pub fn new(field: V, dt: f64) -> Self {
        Self {
            field,
            dt,
            integrator: Integrator::Rk4,
        }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    fn propagate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let h = self.dt;
        let f = |x: &DVector<f64>| self.field.eval(x, u);
        match self.integrator {
            Integrator::Euler => x + f(x) * h,
            Integrator::Rk4 => {
                let k1 = f(x);
                let k2 = f(&(x + &k1 * (0.5 * h)));
                let k3 = f(&(x + &k2 * (0.5 * h)));
                let k4 = f(&(x + &k3 * h));
                x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
            }
        }
    }

    fn propagate_with_sensitivities(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let h = self.dt;
        let m = x.len();
        let eye = DMatrix::<f64>::identity(m, m);
        match self.integrator {
            Integrator::Euler => {
                let (fx, fu) = self.field.jacobians(x, u);
                (x + self.field.eval(x, u) * h, eye + fx * h, fu * h)
            }
            Integrator::Rk4 => {
                // Stage k_i and its derivatives with respect to the step's
                // initial state and the held input.
                let stage = |xi: &DVector<f64>, dxi_dx: &DMatrix<f64>, dxi_du: &DMatrix<f64>| {
                    let k = self.field.eval(xi, u);
                    let (fx, fu) = self.field.jacobians(xi, u);
                    let kx = &fx * dxi_dx;
                    let ku = &fx * dxi_du + fu;
                    (k, kx, ku)
                };
                let zero_u = DMatrix::zeros(m, u.len());
                let (k1, k1x, k1u) = stage(x, &eye, &zero_u);
                let (k2, k2x, k2u) = stage(
                    &(x + &k1 * (0.5 * h)),
                    &(&eye + &k1x * (0.5 * h)),
                    &(&k1u * (0.5 * h)),
                );
                let (k3, k3x, k3u) = stage(
                    &(x + &k2 * (0.5 * h)),
                    &(&eye + &k2x * (0.5 * h)),
                    &(&k2u * (0.5 * h)),
                );
                let (k4, k4x, k4u) = stage(&(x + &k3 * h), &(&eye + &k3x * h), &(&k3u * h));
                let w = h / 6.0;
                (
                    x + (k1 + (k2 + k3) * 2.0 + k4) * w,
                    &eye + (k1x + (k2x + k3x) * 2.0 + k4x) * w,
                    (k1u + (k2u + k3u) * 2.0 + k4u) * w,
                )
            }
        }
    }
}

impl<V: VectorField> Dynamics for ContinuousModelAdapter<V> {
    fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.field.input_dim()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, _n: usize) -> DVector<f64> {
        self.propagate(x, u)
    }

    fn step_with_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _n: usize,
    ) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        self.propagate_with_sensitivities(x, u)
    }
}

/// One zero-order-hold step with its discrete sensitivities.
pub fn integrate_step_with_sensitivities<V: VectorField>(
    adapter: &ContinuousModelAdapter<V>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    n: usize,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if !(adapter.dt > 0.0) {
        return Err(Error::Definition(format!(
            "dt must be positive, got {}",
            adapter.dt
        )));
    }
    let (next, a, b) = adapter.propagate_with_sensitivities(x, u);
    if next
        .iter()
        .chain(a.iter())
        .chain(b.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numerical {
            step: n,
            what: "non-finite state or sensitivity in integration step".into(),
        });
    }
    Ok((next, a, b))
}
