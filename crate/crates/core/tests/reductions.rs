//! With one constraint family removed the solver reduces to known special
//! cases: plain LQR, state-input constrained LQR and state constrained LQR.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pilqr::problem::{LinearDynamics, QuadraticStageCost, QuadraticTerminalCost};
use pilqr::rollout::rollout_policy;
use pilqr::systems::{
    build, lookup, make_double_integrator, DoubleIntegratorConstraint, DoubleIntegratorOptions,
};
use pilqr::{solve, Ocp, Policy, SolverSettings};

/// Backward recursion `K = (R + B'SB)^-1 B'SA`, `S = Q + A'S(A - BK)`.
fn textbook_gains(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    n: usize,
) -> Vec<DMatrix<f64>> {
    let mut s = qf.clone();
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.nrows()); n];
    for k in (0..n).rev() {
        let h = r + b.transpose() * &s * b;
        let gain = h.cholesky().unwrap().solve(&(b.transpose() * &s * a));
        s = q + a.transpose() * &s * (a - b * &gain);
        s = (&s + s.transpose()) * 0.5;
        gains[k] = gain;
    }
    gains
}

#[test]
fn unconstrained_gains_match_textbook_recursion() {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.1, 0.2, -0.3, 0.9]);
    let b = DMatrix::from_row_slice(3, 2, &[0.0, 0.1, 0.1, 0.0, 0.5, 0.2]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.2]));
    let r = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]);
    let qf = q.clone() * 5.0;
    let horizon = 40;
    let ocp = Ocp::new(
        Arc::new(LinearDynamics {
            a: a.clone(),
            b: b.clone(),
        }),
        Arc::new(QuadraticStageCost::new(q.clone(), r.clone())),
        Arc::new(QuadraticTerminalCost {
            q: qf.clone(),
            x_ref: DVector::zeros(3),
        }),
        horizon,
        DVector::from_vec(vec![1.0, -0.5, 0.3]),
        0.1,
    );
    let init = Policy::open_loop(vec![DVector::from_vec(vec![0.2, -0.1]); horizon], 3);
    let result = solve(&ocp, &init, &SolverSettings::default()).unwrap();
    assert!(result.converged());
    assert_eq!(result.iterations, 1);
    for (k, expected) in textbook_gains(&a, &b, &q, &r, &qf, horizon)
        .iter()
        .enumerate()
    {
        let err = (&result.policy.gains[k] + expected).amax();
        assert!(
            err <= 1e-9 * expected.amax().max(1.0),
            "step {k}: gain error {err:e}"
        );
    }
}

#[test]
fn state_input_constraint_holds_along_converged_rollout() {
    let inst = make_double_integrator(&DoubleIntegratorOptions {
        constraint: DoubleIntegratorConstraint::StateInput,
        ..Default::default()
    })
    .unwrap();
    let result = solve(&inst.ocp, &inst.initial_policy, &SolverSettings::default()).unwrap();
    assert!(result.converged());
    let g = inst.ocp.state_input_constraint.as_ref().unwrap();
    for (n, (x, u)) in result
        .trajectory
        .states
        .iter()
        .zip(&result.trajectory.inputs)
        .enumerate()
    {
        let r = g.value(x, u, n).amax();
        assert!(r <= 1e-8, "step {n}: residual {r:e}");
    }
}

#[test]
fn state_constraint_keeps_closed_loop_on_the_constraint() {
    let inst = make_double_integrator(&DoubleIntegratorOptions {
        constraint: DoubleIntegratorConstraint::Position,
        ..Default::default()
    })
    .unwrap();
    let result = solve(&inst.ocp, &inst.initial_policy, &SolverSettings::default()).unwrap();
    assert!(result.converged());
    let c = inst.ocp.state_constraint.as_ref().unwrap();
    let check = |ocp: &Ocp, policy: &Policy| {
        let traj = rollout_policy(ocp, policy).unwrap();
        for (n, x) in traj.states.iter().enumerate() {
            let r = c.value(x, n).amax();
            assert!(r <= 1e-8, "step {n}: residual {r:e}");
        }
    };
    check(&inst.ocp, &result.policy);

    // a different start on the constraint stays on it under the same feedback
    let mut shifted = inst.ocp.clone();
    shifted.x0 = DVector::from_vec(vec![0.7, 0.7, 0.2, -0.1]);
    check(&shifted, &result.policy);
}

#[test]
fn catalog_lq_problems_converge_in_one_iteration() {
    for name in [
        "double_integrator",
        "double_integrator_position",
        "double_integrator_state_input",
        "random_lq",
    ] {
        let entry = lookup(name).unwrap();
        let inst = build(name, &entry.default_params()).unwrap();
        let result = solve(&inst.ocp, &inst.initial_policy, &SolverSettings::default()).unwrap();
        assert!(result.converged(), "{name}");
        assert_eq!(result.iterations, 1, "{name}");
        assert_eq!(result.reports[1].alpha, 1.0, "{name}");
    }
}

#[test]
fn random_lq_problems_take_the_full_step_first() {
    // several of these start far from feasible at low cost
    for seed in 0..50 {
        let inst = pilqr::systems::make_random_constrained_lq(seed, 4, 3, 20).unwrap();
        let r = solve(&inst.ocp, &inst.initial_policy, &SolverSettings::default()).unwrap();
        assert_eq!(r.reports[1].alpha, 1.0, "seed {seed}");
        assert!(r.converged(), "seed {seed}: {:?}", r.status);
    }
}
