//! Point masses driven by force along each axis.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::problem::{
    LinearStateConstraint, LinearStateInputConstraint, Ocp, QuadraticStageCost,
    QuadraticTerminalCost,
};
use crate::riccati::Policy;
use crate::rollout::{ContinuousModelAdapter, Integrator, VectorField};

use super::ProblemInstance;

/// `p'' = u` in `axes` dimensions, state `[p; v]`.
#[derive(Debug, Clone, Copy)]
pub struct DoubleIntegratorField {
    pub axes: usize,
}

impl VectorField for DoubleIntegratorField {
    fn state_dim(&self) -> usize {
        2 * self.axes
    }
    fn input_dim(&self) -> usize {
        self.axes
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let d = self.axes;
        let mut out = DVector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&x.rows(d, d));
        out.rows_mut(d, d).copy_from(u);
        out
    }
    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.axes;
        let mut fx = DMatrix::zeros(2 * d, 2 * d);
        fx.view_mut((0, d), (d, d)).fill_with_identity();
        let mut fu = DMatrix::zeros(2 * d, d);
        fu.view_mut((d, 0), (d, d)).fill_with_identity();
        (fx, fu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoubleIntegratorConstraint {
    None,
    /// Two axes, `p_0 - p_1 = 0`: a pure-state position constraint.
    Position,
    /// Two axes, `u_0 + u_1 + 0.5 v_0 = 0.2`: a state-input constraint.
    StateInput,
}

#[derive(Debug, Clone, Copy)]
pub struct DoubleIntegratorOptions {
    pub constraint: DoubleIntegratorConstraint,
    pub integrator: Integrator,
    pub horizon: usize,
    pub dt: f64,
}

impl Default for DoubleIntegratorOptions {
    fn default() -> Self {
        Self {
            constraint: DoubleIntegratorConstraint::None,
            integrator: Integrator::Rk4,
            horizon: 100,
            dt: 0.02,
        }
    }
}

/// Exact zero-order-hold matrices for `axes` independent double integrators.
pub fn discrete_matrices(axes: usize, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = axes;
    let mut a = DMatrix::identity(2 * d, 2 * d);
    let mut b = DMatrix::zeros(2 * d, d);
    for i in 0..d {
        a[(i, d + i)] = dt;
        b[(i, i)] = 0.5 * dt * dt;
        b[(d + i, i)] = dt;
    }
    (a, b)
}

pub fn make_double_integrator(opts: &DoubleIntegratorOptions) -> Result<ProblemInstance> {
    let axes = match opts.constraint {
        DoubleIntegratorConstraint::None => 1,
        _ => 2,
    };
    let m = 2 * axes;
    let dt = opts.dt;
    let dynamics = ContinuousModelAdapter::new(DoubleIntegratorField { axes }, dt)
        .with_integrator(opts.integrator);

    let mut q_diag = vec![1.0; axes];
    q_diag.extend(vec![0.1; axes]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(q_diag));
    let r = DMatrix::identity(axes, axes) * 0.1;
    let stage = QuadraticStageCost::new(q.clone(), r).with_scale(dt);
    let terminal = QuadraticTerminalCost {
        q: q * 10.0,
        x_ref: DVector::zeros(m),
    };
    let x0 = match axes {
        1 => DVector::from_vec(vec![1.0, 0.0]),
        _ => DVector::from_vec(vec![1.0, 1.0, 0.0, -0.3]),
    };
    let mut ocp = Ocp::new(
        Arc::new(dynamics),
        Arc::new(stage),
        Arc::new(terminal),
        opts.horizon,
        x0,
        dt,
    );
    match opts.constraint {
        DoubleIntegratorConstraint::None => {}
        DoubleIntegratorConstraint::Position => {
            let c = Arc::new(LinearStateConstraint {
                c: DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 0.0, 0.0]),
                offsets: vec![DVector::zeros(1)],
            });
            ocp = ocp
                .with_state_constraint(c.clone())
                .with_terminal_constraint(c);
        }
        DoubleIntegratorConstraint::StateInput => {
            ocp = ocp.with_state_input_constraint(Arc::new(LinearStateInputConstraint {
                d: DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.5, 0.0]),
                e: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
                offsets: vec![DVector::from_element(1, 0.2)],
            }));
        }
    }
    let initial_policy = Policy::open_loop(vec![DVector::zeros(axes); opts.horizon], m);
    Ok(ProblemInstance {
        ocp,
        initial_policy,
        steady_input: DVector::zeros(axes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_reproduces_exact_discretization() {
        let inst = make_double_integrator(&DoubleIntegratorOptions {
            constraint: DoubleIntegratorConstraint::Position,
            ..Default::default()
        })
        .unwrap();
        let (a, b) = discrete_matrices(2, 0.02);
        let x = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.5]);
        let u = DVector::from_vec(vec![1.0, -2.0]);
        let (next, ad, bd) = inst.ocp.dynamics.step_with_jacobians(&x, &u, 0);
        assert_relative_eq!(ad, a, epsilon = 1e-14);
        assert_relative_eq!(bd, b, epsilon = 1e-14);
        assert_relative_eq!(next, &a * &x + &b * &u, epsilon = 1e-14);
    }

    #[test]
    fn initial_state_is_feasible() {
        let inst = make_double_integrator(&DoubleIntegratorOptions {
            constraint: DoubleIntegratorConstraint::Position,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(inst.ocp.initial_state_residual().amax(), 0.0);
        inst.ocp.validate().unwrap();
    }
}
