//! Catalog derivatives against central differences and the relative-degree
//! screen along nominal rollouts.

use nalgebra::DVector;
use pilqr::error::Error;
use pilqr::linalg::DEFAULT_RANK_TOL;
use pilqr::projection::project_all;
use pilqr::rollout::{finite_difference_jacobian, linearize_and_quadratize, rollout_policy};
use pilqr::systems::{build, catalog, lookup, ProblemInstance};
use pilqr::{solve, SolverSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 20;
const FD_REL_TOL: f64 = 1e-5;

fn instance(name: &str) -> ProblemInstance {
    build(name, &lookup(name).unwrap().default_params()).unwrap()
}

fn within(analytic: &nalgebra::DMatrix<f64>, fd: &nalgebra::DMatrix<f64>) -> f64 {
    if analytic.is_empty() {
        return 0.0;
    }
    (analytic - fd).amax() / analytic.amax().max(1.0)
}

#[test]
fn derivatives_match_central_differences_at_random_points() {
    for entry in catalog() {
        let inst = instance(entry.name);
        let ocp = &inst.ocp;
        let (m, p) = (ocp.state_dim(), ocp.input_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for k in 0..POINTS {
            let x = &ocp.x0 + DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5));
            let u = &inst.steady_input + DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
            let n = rng.gen_range(0..ocp.horizon);
            let z = DVector::from_iterator(m + p, x.iter().chain(u.iter()).copied());

            let (_, a, b) = ocp.dynamics.step_with_jacobians(&x, &u, n);
            let fd = finite_difference_jacobian(
                |z| {
                    ocp.dynamics
                        .step(&z.rows(0, m).into_owned(), &z.rows(m, p).into_owned(), n)
                },
                &z,
                1e-6,
            );
            let err = within(&a, &fd.columns(0, m).into_owned())
                .max(within(&b, &fd.columns(m, p).into_owned()));
            assert!(
                err <= FD_REL_TOL,
                "{} point {k}: dynamics error {err:e}",
                entry.name
            );

            if let Some(g) = &ocp.state_constraint {
                let fd = finite_difference_jacobian(|x| g.value(x, n), &x, 1e-6);
                let err = within(&g.jacobian(&x, n), &fd);
                assert!(
                    err <= FD_REL_TOL,
                    "{} point {k}: state constraint error {err:e}",
                    entry.name
                );
            }
            if let Some(g) = &ocp.state_input_constraint {
                let (d, e) = g.jacobians(&x, &u, n);
                let fd = finite_difference_jacobian(
                    |z| g.value(&z.rows(0, m).into_owned(), &z.rows(m, p).into_owned(), n),
                    &z,
                    1e-6,
                );
                let err = within(&d, &fd.columns(0, m).into_owned())
                    .max(within(&e, &fd.columns(m, p).into_owned()));
                assert!(
                    err <= FD_REL_TOL,
                    "{} point {k}: state-input constraint error {err:e}",
                    entry.name
                );
            }
        }
    }
}

#[test]
fn nominal_rollouts_pass_the_relative_degree_screen() {
    for entry in catalog() {
        let inst = instance(entry.name);
        let nominal = rollout_policy(&inst.ocp, &inst.initial_policy).unwrap();
        let lq = linearize_and_quadratize(&inst.ocp, &nominal, DEFAULT_RANK_TOL).unwrap();
        let screened = project_all(&lq, DEFAULT_RANK_TOL);
        assert_eq!(
            screened.is_ok(),
            entry.relative_degree_one,
            "{}",
            entry.name
        );
        assert!(
            inst.ocp.initial_state_residual().amax() <= 1e-12,
            "{}",
            entry.name
        );
    }
}

#[test]
fn euler_variant_is_rejected_with_a_relative_degree_diagnostic() {
    let inst = instance("double_integrator_euler");
    match solve(&inst.ocp, &inst.initial_policy, &SolverSettings::default()) {
        Err(Error::RelativeDegree(v)) => assert_eq!(v.step, 0),
        other => panic!(
            "expected a relative-degree error, got {:?}",
            other.map(|r| r.status)
        ),
    }
}

#[test]
fn unknown_names_are_reported() {
    assert!(lookup("no_such_problem").is_none());
    assert!(matches!(
        build("", &lookup("double_integrator").unwrap().default_params()),
        Err(Error::Definition(_))
    ));
}
