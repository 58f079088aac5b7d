//! A 3D point mass under gravity that must stay on the surface
//! `y sin(2 pi x) - x cos(2 pi y) - z = 0` while flying towards a target
//! that lies off the surface.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::Result;
use crate::problem::{Ocp, QuadraticStageCost, QuadraticTerminalCost, StateConstraint};
use crate::rollout::{ContinuousModelAdapter, VectorField};
use crate::solver::lqr_initial_policy;

use super::ProblemInstance;

pub const GRAVITY: f64 = 9.81;
pub const MASS: f64 = 1.0;

/// Tunable parts of the problem.
#[derive(Debug, Clone, Copy)]
pub struct PointMassOptions {
    pub target: Vector3<f64>,
    /// Terminal weight on the position error.
    pub terminal_weight: f64,
    /// Stage weight on the position error, per second.
    pub tracking_weight: f64,
    /// Stage weight on the force deviation from hover, per second.
    pub effort_weight: f64,
}

impl Default for PointMassOptions {
    fn default() -> Self {
        Self {
            target: Vector3::new(0.3, 0.2, -0.1),
            terminal_weight: 1e4,
            tracking_weight: 1.0,
            effort_weight: 0.01,
        }
    }
}

pub fn hover_force() -> DVector<f64> {
    DVector::from_vec(vec![0.0, 0.0, MASS * GRAVITY])
}

/// State `[p; v]`, input a force.
#[derive(Debug, Clone, Copy)]
pub struct PointMassField;

impl VectorField for PointMassField {
    fn state_dim(&self) -> usize {
        6
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            x[3],
            x[4],
            x[5],
            u[0] / MASS,
            u[1] / MASS,
            u[2] / MASS - GRAVITY,
        ])
    }
    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut fx = DMatrix::zeros(6, 6);
        fx.view_mut((0, 3), (3, 3)).fill_with_identity();
        let mut fu = DMatrix::zeros(6, 3);
        fu.view_mut((3, 0), (3, 3)).fill_with_identity();
        (fx, fu / MASS)
    }
}

pub fn surface(p: &Vector3<f64>) -> f64 {
    p.y * (TAU * p.x).sin() - p.x * (TAU * p.y).cos() - p.z
}

pub fn surface_gradient(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(
        TAU * p.y * (TAU * p.x).cos() - (TAU * p.y).cos(),
        (TAU * p.x).sin() + TAU * p.x * (TAU * p.y).sin(),
        -1.0,
    )
}

fn position(x: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

#[derive(Debug, Clone, Copy)]
pub struct SurfaceConstraint;

impl StateConstraint for SurfaceConstraint {
    fn dim(&self, _n: usize) -> usize {
        1
    }
    fn value(&self, x: &DVector<f64>, _n: usize) -> DVector<f64> {
        DVector::from_element(1, surface(&position(x)))
    }
    fn jacobian(&self, x: &DVector<f64>, _n: usize) -> DMatrix<f64> {
        let g = surface_gradient(&position(x));
        DMatrix::from_row_slice(1, 6, &[g.x, g.y, g.z, 0.0, 0.0, 0.0])
    }
}

/// Component of `p - target` tangent to the surface at `p`: zero at a
/// constrained local minimizer of the distance to the target.
pub fn tangential_residual(p: &Vector3<f64>, target: &Vector3<f64>) -> f64 {
    let n = surface_gradient(p).normalize();
    let d = p - target;
    (d - n * n.dot(&d)).norm()
}

pub fn make_point_mass_surface(horizon: usize, dt: f64) -> Result<ProblemInstance> {
    make_point_mass_surface_with(horizon, dt, &PointMassOptions::default())
}

pub fn make_point_mass_surface_with(
    horizon: usize,
    dt: f64,
    opts: &PointMassOptions,
) -> Result<ProblemInstance> {
    let t = opts.target;
    let x_ref = DVector::from_vec(vec![t.x, t.y, t.z, 0.0, 0.0, 0.0]);
    let (w, wt) = (opts.tracking_weight, opts.terminal_weight);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![w, w, w, 0.1 * w, 0.1 * w, 0.1 * w]));
    let r = DMatrix::identity(3, 3) * opts.effort_weight;
    let stage = QuadraticStageCost::new(q, r)
        .with_reference(x_ref.clone(), hover_force())
        .with_scale(dt);
    let terminal = QuadraticTerminalCost {
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![
            wt,
            wt,
            wt,
            1e-3 * wt,
            1e-3 * wt,
            1e-3 * wt,
        ])),
        x_ref,
    };
    let c = Arc::new(SurfaceConstraint);
    let ocp = Ocp::new(
        Arc::new(ContinuousModelAdapter::new(PointMassField, dt)),
        Arc::new(stage),
        Arc::new(terminal),
        horizon,
        DVector::zeros(6),
        dt,
    )
    .with_state_constraint(c.clone())
    .with_terminal_constraint(c);
    let initial_policy = lqr_initial_policy(&ocp, &hover_force())?;
    Ok(ProblemInstance {
        ocp,
        initial_policy,
        steady_input: hover_force(),
    })
}
