//! `pilqr validate <problem>`: oracle and invariant checks for one catalog
//! problem, printed as a pass/fail table.

use nalgebra::{DMatrix, DVector};
use pilqr::linalg::nullspace_projector;
use pilqr::projection::project_all;
use pilqr::riccati::assemble_policy;
use pilqr::rollout::{
    finite_difference_jacobian, linearize_and_quadratize, rollout_policy, LqApproximation,
};
use pilqr::solver::sweep;
use pilqr::systems::{build, dense_kkt_oracle, lookup, ProblemInstance};
use pilqr::{solve, SolverResult, SolverSettings, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{EXIT_ABORTED, EXIT_CONFIG, EXIT_OK};

pub const DERIVATIVE_POINTS: usize = 20;
pub const DERIVATIVE_TOL: f64 = 1e-5;
pub const ORACLE_TOL: f64 = 1e-6;
pub const COMPLIANCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a - b).amax() / a.amax().max(1.0)
}

/// Largest relative gap between analytic and central-difference Jacobians
/// of the dynamics and constraints at random points near the start.
pub fn derivative_error(inst: &ProblemInstance, points: usize, seed: u64) -> f64 {
    let ocp = &inst.ocp;
    let (m, p) = (ocp.state_dim(), ocp.input_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = &ocp.x0 + DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5));
        let u = &inst.steady_input + DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
        let n = rng.gen_range(0..ocp.horizon);
        let z = DVector::from_iterator(m + p, x.iter().chain(u.iter()).copied());
        let split = |z: &DVector<f64>| (z.rows(0, m).into_owned(), z.rows(m, p).into_owned());

        let (_, a, b) = ocp.dynamics.step_with_jacobians(&x, &u, n);
        let fd = finite_difference_jacobian(
            |z| {
                let (x, u) = split(z);
                ocp.dynamics.step(&x, &u, n)
            },
            &z,
            1e-6,
        );
        worst = worst.max(rel_err(&a, &fd.columns(0, m).into_owned()));
        worst = worst.max(rel_err(&b, &fd.columns(m, p).into_owned()));
        for g in [&ocp.state_constraint, &ocp.terminal_constraint]
            .into_iter()
            .flatten()
        {
            let fd = finite_difference_jacobian(|x| g.value(x, n), &x, 1e-6);
            worst = worst.max(rel_err(&g.jacobian(&x, n), &fd));
        }
        if let Some(g) = &ocp.state_input_constraint {
            let (d, e) = g.jacobians(&x, &u, n);
            let fd = finite_difference_jacobian(
                |z| {
                    let (x, u) = split(z);
                    g.value(&x, &u, n)
                },
                &z,
                1e-6,
            );
            worst = worst.max(rel_err(&d, &fd.columns(0, m).into_owned()));
            worst = worst.max(rel_err(&e, &fd.columns(m, p).into_owned()));
        }
    }
    worst
}

/// Relative gap between the sweep's full step, propagated through the LQ
/// model, and the dense KKT minimizer of the same model.
pub fn oracle_error(
    inst: &ProblemInstance,
    nominal: &Trajectory,
    lq: &LqApproximation,
    settings: &SolverSettings,
) -> pilqr::Result<f64> {
    let m = inst.ocp.state_dim();
    let oracle = dense_kkt_oracle(
        &lq.stages,
        &lq.constraints,
        &lq.terminal,
        &DVector::zeros(m),
    )?;
    let (projections, values) = sweep(&inst.ocp, nominal, settings)?;
    let policy = assemble_policy(&projections, &values, nominal, 1.0);
    let mut dx = DVector::zeros(m);
    let (mut diff, mut scale) = (0.0, 0.0);
    for (n, st) in lq.stages.iter().enumerate() {
        let du = policy.apply(n, &(&nominal.states[n] + &dx)) - &nominal.inputs[n];
        diff += (&du - &oracle.inputs[n]).norm_squared() + (&dx - &oracle.states[n]).norm_squared();
        scale += oracle.inputs[n].norm_squared() + oracle.states[n].norm_squared();
        dx = &st.a * &dx + &st.b * &du;
    }
    diff += (&dx - &oracle.states[lq.horizon()]).norm_squared();
    scale += oracle.states[lq.horizon()].norm_squared();
    Ok(diff.sqrt() / scale.sqrt().max(1.0))
}

/// Worst linearized constraint residual one step after a feedback
/// response to a constraint-consistent perturbation, per unit perturbation.
pub fn compliance_error(
    inst: &ProblemInstance,
    result: &SolverResult,
    rank_tol: f64,
) -> pilqr::Result<f64> {
    let lq = linearize_and_quadratize(&inst.ocp, &result.trajectory, rank_tol)?;
    let m = inst.ocp.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for n in 0..lq.horizon() {
        let cons = &lq.constraints[n];
        let basis = if cons.state_jac.nrows() > 0 {
            nullspace_projector(&cons.state_jac).map_err(|e| e.at_step(n))?
        } else {
            DMatrix::identity(m, m)
        };
        let dx = basis * DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        if dx.norm() == 0.0 {
            continue;
        }
        let du = &result.policy.gains[n] * &dx;
        let next = &lq.stages[n].a * &dx + &lq.stages[n].b * &du;
        let (next_jac, _) = lq.next_state_constraint(n);
        let r = (next_jac * next)
            .norm()
            .max((&cons.input_jac_x * &dx + &cons.input_jac_u * &du).norm());
        worst = worst.max(r / dx.norm());
    }
    Ok(worst)
}

fn strictly_decreasing(result: &SolverResult) -> bool {
    let merits: Vec<f64> = result
        .reports
        .iter()
        .filter(|r| r.accepted)
        .map(|r| r.merit)
        .collect();
    merits.windows(2).all(|w| w[1] < w[0])
}

fn same_reports(a: &SolverResult, b: &SolverResult) -> bool {
    a.reports.len() == b.reports.len()
        && a.reports.iter().zip(&b.reports).all(|(x, y)| {
            [x.merit, x.cost, x.ise, x.alpha]
                .iter()
                .zip([y.merit, y.cost, y.ise, y.alpha])
                .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

/// Run every check that applies; later checks are skipped once the problem
/// fails the relative-degree screen.
pub fn run_validation(problem: &str, seed: u64) -> pilqr::Result<Vec<Check>> {
    let entry = lookup(problem)
        .ok_or_else(|| pilqr::Error::Definition(format!("unknown problem '{problem}'")))?;
    let mut params = entry.default_params();
    params.seed = seed;
    let inst = build(problem, &params)?;
    let settings = SolverSettings {
        validation_mode: true,
        ..entry.solver_settings(params.dt)
    };
    let mut checks = Vec::new();

    let err = derivative_error(&inst, DERIVATIVE_POINTS, seed);
    checks.push(check(
        "derivatives",
        err <= DERIVATIVE_TOL,
        format!("max relative error {err:.2e}"),
    ));

    let nominal = rollout_policy(&inst.ocp, &inst.initial_policy)?;
    let lq = linearize_and_quadratize(&inst.ocp, &nominal, settings.rank_tol)?;
    if let Err(e) = project_all(&lq, settings.rank_tol) {
        checks.push(check("relative degree", false, e.to_string()));
        return Ok(checks);
    }
    checks.push(check(
        "relative degree",
        true,
        format!("{} steps", lq.horizon()),
    ));

    match oracle_error(&inst, &nominal, &lq, &settings) {
        Ok(e) => checks.push(check(
            "KKT oracle",
            e <= ORACLE_TOL,
            format!("relative error {e:.2e}"),
        )),
        Err(e) => checks.push(check("KKT oracle", false, e.to_string())),
    }

    let result = match solve(&inst.ocp, &inst.initial_policy, &settings) {
        Ok(r) => r,
        Err(e) => {
            // validation mode turns an inadmissible singular step into an error
            checks.push(check("singular conditions", false, e.to_string()));
            return Ok(checks);
        }
    };
    checks.push(check(
        "singular conditions",
        true,
        format!("checked at every step of {} sweeps", result.passes),
    ));
    let last = result.final_report();
    checks.push(check(
        "convergence",
        result.converged() && last.ise < settings.ise_max,
        format!(
            "{:?} after {} iterations, ISE {:.2e}",
            result.status, result.iterations, last.ise
        ),
    ));
    checks.push(check(
        "merit decrease",
        strictly_decreasing(&result),
        format!(
            "{} accepted iterates",
            result.reports.iter().filter(|r| r.accepted).count()
        ),
    ));
    match compliance_error(&inst, &result, settings.rank_tol) {
        Ok(e) => checks.push(check(
            "feedback compliance",
            e <= COMPLIANCE_TOL,
            format!("residual {e:.2e} per unit"),
        )),
        Err(e) => checks.push(check("feedback compliance", false, e.to_string())),
    }
    let again = solve(&inst.ocp, &inst.initial_policy, &settings)?;
    checks.push(check(
        "determinism",
        same_reports(&result, &again),
        "two identical runs".into(),
    ));
    Ok(checks)
}

pub fn print_table(problem: &str, checks: &[Check]) {
    println!("{problem}");
    for c in checks {
        println!(
            "  {:<20} {:<4}  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
}

pub fn cmd_validate(problem: &str, seed: u64) -> i32 {
    if problem.trim().is_empty() {
        eprintln!("error: empty problem name");
        return EXIT_CONFIG;
    }
    if lookup(problem).is_none() {
        eprintln!("error: unknown problem '{problem}'");
        return EXIT_CONFIG;
    }
    match run_validation(problem, seed) {
        Ok(checks) => {
            print_table(problem, &checks);
            if checks.iter().all(|c| c.passed) {
                EXIT_OK
            } else {
                EXIT_ABORTED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ABORTED
        }
    }
}
