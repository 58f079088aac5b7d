//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Timing-sensitive checks assume an optimized build.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use pilqr::linalg::vstack;
use pilqr::problem::{LinearDynamics, QuadraticStageCost, QuadraticTerminalCost};
use pilqr::projection::{project_stage, projection_from_parts};
use pilqr::riccati::{assemble_policy, check_hessian_conditions};
use pilqr::rollout::{
    integrate_step_with_sensitivities, linearize_and_quadratize, rollout_policy, ConstraintStage,
    ContinuousModelAdapter, LqStage, VectorField,
};
use pilqr::solver::sweep;
use pilqr::systems::planar_arm::EndEffectorLine;
use pilqr::systems::point_mass::{tangential_residual, PointMassOptions};
use pilqr::systems::{
    build, catalog, dense_kkt_oracle, lookup, make_double_integrator, make_random_constrained_lq,
    DoubleIntegratorConstraint, DoubleIntegratorOptions,
};
use pilqr::{solve, Ocp, Policy, SolverResult, SolverSettings};
use pilqr_cli::bench::run_bench;
use pilqr_cli::validate::derivative_error;
use pilqr_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn catalog_run(
    name: &str,
    validation_mode: bool,
) -> (pilqr::systems::ProblemInstance, SolverResult) {
    let entry = lookup(name).unwrap();
    let inst = build(name, &entry.default_params()).unwrap();
    let settings = SolverSettings {
        validation_mode,
        ..entry.solver_settings(entry.default_dt)
    };
    let result = solve(&inst.ocp, &inst.initial_policy, &settings).unwrap();
    (inst, result)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let settings = SolverSettings::default();
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (m, p, n) = (
            rng.gen_range(1..=6),
            rng.gen_range(1..=4),
            rng.gen_range(1..=25),
        );
        let inst = make_random_constrained_lq(seed, m, p, n).unwrap();
        let nominal = rollout_policy(&inst.ocp, &inst.initial_policy).unwrap();
        let lq = linearize_and_quadratize(&inst.ocp, &nominal, settings.rank_tol).unwrap();
        let oracle = dense_kkt_oracle(
            &lq.stages,
            &lq.constraints,
            &lq.terminal,
            &DVector::zeros(m),
        )
        .unwrap();
        let (ps, values) = sweep(&inst.ocp, &nominal, &settings).unwrap();
        let traj =
            rollout_policy(&inst.ocp, &assemble_policy(&ps, &values, &nominal, 1.0)).unwrap();
        let (mut diff, mut scale) = (0.0, 0.0);
        for (k, x) in traj.states.iter().enumerate() {
            let e = &nominal.states[k] + &oracle.states[k];
            diff += (x - &e).norm_squared();
            scale += e.norm_squared();
        }
        for (k, u) in traj.inputs.iter().enumerate() {
            let e = &nominal.inputs[k] + &oracle.inputs[k];
            diff += (u - &e).norm_squared();
            scale += e.norm_squared();
        }
        worst = worst.max(diff.sqrt() / scale.sqrt().max(1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-6 && secs < 10.0,
        format!("50 random problems, max relative error {worst:.2e} (tol 1e-6), {secs:.2} s (limit 10 s)"),
    )
}

fn point_mass_surface() -> Outcome {
    let entry = lookup("point_mass_surface").unwrap();
    let params = entry.default_params();
    let inst = build(entry.name, &params).unwrap();
    let start = Instant::now();
    let r = solve(
        &inst.ocp,
        &inst.initial_policy,
        &entry.solver_settings(params.dt),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ise = r.final_report().ise;
    let x = r.trajectory.final_state();
    let tang = tangential_residual(
        &Vector3::new(x[0], x[1], x[2]),
        &PointMassOptions::default().target,
    );
    (
        r.converged() && ise < 1e-3 && r.iterations <= 20 && secs < 5.0 && params.horizon == 300,
        format!(
            "N {}: {:?} in {} iterations (limit 20), ISE {ise:.2e} (limit 1e-3), {secs:.3} s (limit 5 s), tangential residual {tang:.1e}",
            params.horizon, r.status, r.iterations
        ),
    )
}

fn linear_time() -> Outcome {
    let reps: usize = std::env::var("PILQR_BENCH_REPS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let cfg = RunConfig::parse(
        "problem = \"point_mass_surface\"\nhorizon = 3.0\n[bench]\ndt = [0.01, 0.005, 0.0025, 0.00125, 0.000625]\n",
    )
    .unwrap();
    let start = Instant::now();
    let report = run_bench(&cfg, reps, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ratios = report.ratios();
    let r2 = report.fit.map_or(0.0, |f| f.r_squared);
    let ns: Vec<usize> = report.rows.iter().map(|r| r.horizon).collect();
    let ok = ns == [300, 600, 1200, 2400, 4800]
        && r2 >= 0.98
        && ratios.iter().all(|r| (1.6..=2.6).contains(r))
        && secs < 120.0;
    let means: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{:.4}", r.mean_s))
        .collect();
    let ratios: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    (
        ok,
        format!(
            "N {ns:?}, {reps} reps, mean s [{}], ratios [{}] (range 1.6-2.6), R^2 {r2:.4} (min 0.98), {secs:.1} s",
            means.join(", "),
            ratios.join(", ")
        ),
    )
}

fn textbook_gains(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: usize,
) -> Vec<DMatrix<f64>> {
    let mut s = q.clone();
    let mut out = vec![DMatrix::zeros(0, 0); n];
    for k in (0..n).rev() {
        let gain = (r + b.transpose() * &s * b)
            .cholesky()
            .unwrap()
            .solve(&(b.transpose() * &s * a));
        s = q + a.transpose() * &s * (a - b * &gain);
        s = (&s + s.transpose()) * 0.5;
        out[k] = gain;
    }
    out
}

fn reductions() -> Outcome {
    // unconstrained: gains against the textbook recursion
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.1, 0.2, -0.3, 0.9]);
    let b = DMatrix::from_row_slice(3, 2, &[0.0, 0.1, 0.1, 0.0, 0.5, 0.2]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.2]));
    let r = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]);
    let n = 40;
    let ocp = Ocp::new(
        std::sync::Arc::new(LinearDynamics {
            a: a.clone(),
            b: b.clone(),
        }),
        std::sync::Arc::new(QuadraticStageCost::new(q.clone(), r.clone())),
        std::sync::Arc::new(QuadraticTerminalCost {
            q: q.clone(),
            x_ref: DVector::zeros(3),
        }),
        n,
        DVector::from_vec(vec![1.0, -0.5, 0.3]),
        0.1,
    );
    let res = solve(
        &ocp,
        &Policy::open_loop(vec![DVector::zeros(2); n], 3),
        &SolverSettings::default(),
    )
    .unwrap();
    let gain_err = textbook_gains(&a, &b, &q, &r, n)
        .iter()
        .enumerate()
        .map(|(k, g)| (&res.policy.gains[k] + g).amax() / g.amax().max(1.0))
        .fold(0.0, f64::max);

    let solve_di = |constraint| {
        let inst = make_double_integrator(&DoubleIntegratorOptions {
            constraint,
            ..Default::default()
        })
        .unwrap();
        let r = solve(&inst.ocp, &inst.initial_policy, &SolverSettings::default()).unwrap();
        (inst, r)
    };
    let (inst, r1) = solve_di(DoubleIntegratorConstraint::StateInput);
    let g1 = inst.ocp.state_input_constraint.clone().unwrap();
    let state_input_res = r1
        .trajectory
        .inputs
        .iter()
        .enumerate()
        .map(|(k, u)| g1.value(&r1.trajectory.states[k], u, k).amax())
        .fold(0.0, f64::max);
    let (inst, r2) = solve_di(DoubleIntegratorConstraint::Position);
    let g2 = inst.ocp.state_constraint.clone().unwrap();
    let state_res = r2
        .trajectory
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| g2.value(x, k).amax())
        .fold(0.0, f64::max);

    (
        gain_err <= 1e-9 && state_input_res <= 1e-8 && state_res <= 1e-8 && res.converged() && r1.converged() && r2.converged(),
        format!("LQR gain error {gain_err:.1e} (tol 1e-9), state-input residual {state_input_res:.1e} (tol 1e-8), state residual {state_res:.1e} (tol 1e-8)"),
    )
}

fn projection_invariants() -> Outcome {
    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let (m, p) = (1 + (seed % 6) as usize, 1 + (seed % 4) as usize);
        let c1 = (seed as usize / 7) % (p + 1);
        let c2 = ((seed as usize / 3) % (p - c1 + 1)).min(m);
        let w = mat(m + p, m + p);
        let w = &w * w.transpose() + DMatrix::identity(m + p, m + p) * 0.01;
        let lq = LqStage {
            a: mat(m, m),
            b: mat(m, p),
            value: 0.3,
            grad_x: mat(m, 1).column(0).into_owned(),
            hess_xx: w.view((0, 0), (m, m)).into_owned(),
            grad_u: mat(p, 1).column(0).into_owned(),
            hess_uu: w.view((m, m), (p, p)).into_owned(),
            hess_ux: w.view((m, 0), (p, m)).into_owned(),
        };
        let mut cons = ConstraintStage::empty(m, p);
        cons.input_jac_x = mat(c1, m);
        cons.input_jac_u = mat(c1, p);
        cons.input_rhs = mat(c1, 1).column(0).into_owned();
        let (cn, dn) = (mat(c2, m), mat(c2, 1).column(0).into_owned());
        let ps = projection_from_parts(&lq, &cons, &cn, &dn, 0).unwrap();
        let pr = project_stage(&lq, &ps);
        let proj = &ps.projector;
        let lhs_u = vstack(&cons.input_jac_u, &(&cn * &lq.b));
        worst = worst
            .max((proj * proj - proj).amax())
            .max((proj - proj.transpose()).amax())
            .max((&lhs_u * proj).amax() / lhs_u.amax().max(1.0));
        let dx = mat(m, 1).column(0).into_owned();
        let wv = mat(p, 1).column(0).into_owned();
        let du = ps.input(&dx, &wv);
        worst = worst.max(rel(lq.cost(&dx, &du), pr.cost(&dx, &wv)));
        let next = &lq.a * &dx + &lq.b * &du;
        worst = worst.max((&next - pr.next_state(&dx, &wv)).norm() / next.norm().max(1.0));
    }
    (
        worst <= 1e-9,
        format!("200 random stages, worst identity error {worst:.1e} (tol 1e-9)"),
    )
}

fn singular_conditions() -> Outcome {
    let mut runs = 0;
    let mut failures = Vec::new();
    for entry in catalog().iter().filter(|e| e.relative_degree_one) {
        let (_, r) = catalog_run(entry.name, true);
        runs += 1;
        if !r.converged() {
            failures.push(entry.name);
        }
    }
    let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let g = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 1.0]);
    let rejected = check_hessian_conditions(&h, &g, 0.0, 0, 1e-9).is_err();
    (
        failures.is_empty() && rejected,
        format!("{runs} validation-mode runs checked at every step, failures {failures:?}, violating stage rejected: {rejected}"),
    )
}

struct Oscillator;

impl VectorField for Oscillator {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1], -4.0 * x[0] - 0.3 * x[1] + u[0]])
    }
}

/// Zero-order-hold discretization from the exponential of the augmented
/// matrix `[F G; 0 0] dt`.
fn exact_discretization(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut aug = DMatrix::zeros(3, 3);
    aug.view_mut((0, 0), (2, 3))
        .copy_from_slice(&[0.0, -4.0, 1.0, -0.3, 0.0, 1.0]);
    let e = (aug * dt).exp();
    (
        e.view((0, 0), (2, 2)).into_owned(),
        e.view((0, 2), (2, 1)).into_owned(),
    )
}

fn derivatives() -> Outcome {
    let err = |dt: f64| {
        let adapter = ContinuousModelAdapter::new(Oscillator, dt);
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let u = DVector::from_element(1, 0.5);
        let (_, a, b) = integrate_step_with_sensitivities(&adapter, &x, &u, 0).unwrap();
        let (ae, be) = exact_discretization(dt);
        (a - ae).amax().max((b - be).amax())
    };
    let ratios: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&dt| err(dt) / err(dt / 2.0))
        .collect();
    let mut worst: f64 = 0.0;
    for entry in catalog() {
        let inst = build(entry.name, &entry.default_params()).unwrap();
        worst = worst.max(derivative_error(&inst, 20, 42));
    }
    let ratio_str: Vec<String> = ratios.iter().map(|r| format!("{r:.1}")).collect();
    (
        ratios.iter().all(|&r| r >= 14.0) && worst <= 1e-5,
        format!(
            "RK4 error ratios per halving [{}] (min 14), catalog Jacobian error {worst:.1e} at 20 points each (tol 1e-5)",
            ratio_str.join(", ")
        ),
    )
}

fn merit_behaviour() -> Outcome {
    let mut problems = Vec::new();
    for entry in catalog().iter().filter(|e| e.relative_degree_one) {
        let (_, r) = catalog_run(entry.name, false);
        let merits: Vec<f64> = r
            .reports
            .iter()
            .filter(|x| x.accepted)
            .map(|x| x.merit)
            .collect();
        if !r.converged() || !merits.windows(2).all(|w| w[1] < w[0]) {
            problems.push(format!("{} not monotone", entry.name));
        }
        if entry.merit_rate.is_none() && r.reports[1].alpha != 1.0 {
            problems.push(format!("{} first alpha {}", entry.name, r.reports[1].alpha));
        }
    }
    for seed in 0..50u64 {
        let inst = make_random_constrained_lq(seed, 4, 3, 20).unwrap();
        let r = solve(&inst.ocp, &inst.initial_policy, &SolverSettings::default()).unwrap();
        if r.reports[1].alpha != 1.0 {
            problems.push(format!(
                "random LQ seed {seed} first alpha {}",
                r.reports[1].alpha
            ));
        }
    }
    (
        problems.is_empty(),
        if problems.is_empty() {
            "accepted merits strictly decrease on every catalog run; alpha = 1 first on every LQ problem".into()
        } else {
            problems.join("; ")
        },
    )
}

fn planar_arm() -> Outcome {
    let (_, r) = catalog_run("planar_arm", false);
    let line = EndEffectorLine::through_initial_pose(Default::default());
    let worst = r
        .trajectory
        .states
        .iter()
        .map(|x| line.deviation(x).abs())
        .fold(0.0, f64::max);
    (
        r.converged() && worst <= 5e-3,
        format!(
            "{:?} in {} iterations, max end-effector deviation {worst:.1e} m (limit 5e-3)",
            r.status, r.iterations
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 point mass on surface", point_mass_surface),
        ("3 linear time", linear_time),
        ("4 reductions", reductions),
        ("5 projection invariants", projection_invariants),
        ("6 singular conditions", singular_conditions),
        ("7 derivatives", derivatives),
        ("8 merit and line search", merit_behaviour),
        ("9 planar arm on line", planar_arm),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
