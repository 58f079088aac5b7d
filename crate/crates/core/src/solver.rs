//! Outer iteration: rollout, linearize, project, backward sweep and a
//! merit-based line search over the feedforward step length.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, DEFAULT_RANK_TOL};
use crate::problem::{
    evaluate_constraint_stack, evaluate_total_cost, ConstraintViolations, Ocp, Trajectory,
};
use crate::projection::{project_all, project_stage, ProjectionStage};
use crate::riccati::{assemble_policy, backward_pass, BackwardOptions, BackwardSolution, Policy};
use crate::rollout::{linearize_and_quadratize, rollout_policy};

/// In fast mode the admissibility conditions are sampled every this many steps.
pub const FAST_CHECK_STRIDE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Merit weight on the L1 constraint violation. `None` picks
    /// `10 cost_0 / (1 + l1_0)` from the initial rollout, raised to twice the
    /// predicted cost increase per unit of violation the first step removes.
    pub sigma: Option<f64>,
    pub alpha_decay: f64,
    pub max_linesearch_steps: usize,
    pub max_iterations: usize,
    pub merit_rel_tol: f64,
    pub ise_max: f64,
    /// Check the singular-step conditions at every step instead of sampling.
    pub validation_mode: bool,
    pub rank_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            sigma: None,
            alpha_decay: 2.0,
            max_linesearch_steps: 12,
            max_iterations: 50,
            merit_rel_tol: 1e-6,
            ise_max: 1e-3,
            validation_mode: false,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Definition(format!("solver setting {what}")));
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sigma must be positive");
            }
        }
        if !(self.alpha_decay > 1.0 && self.alpha_decay.is_finite()) {
            return bad("alpha_decay must exceed 1");
        }
        if self.max_linesearch_steps == 0 || self.max_iterations == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.merit_rel_tol > 0.0 && self.ise_max > 0.0 && self.rank_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }

    fn backward_options(&self) -> BackwardOptions {
        BackwardOptions {
            rank_tol: self.rank_tol,
            check_every: if self.validation_mode {
                1
            } else {
                FAST_CHECK_STRIDE
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    /// `0` is the initial rollout.
    pub iteration: usize,
    pub merit: f64,
    pub cost: f64,
    pub ise: f64,
    /// Accepted step length; `0` when the nominal trajectory was kept.
    pub alpha: f64,
    /// Largest absolute constraint value per step, terminal last.
    pub max_violation: Vec<f64>,
    pub accepted: bool,
    pub converged: bool,
}

pub trait IterationObserver {
    fn on_iteration(&mut self, report: &IterationReport);
}

impl<F: FnMut(&IterationReport)> IterationObserver for F {
    fn on_iteration(&mut self, report: &IterationReport) {
        self(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// Two consecutive line searches found no improving step.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    /// Feedback law about `trajectory`; rolling it out reproduces it.
    pub policy: Policy,
    pub trajectory: Trajectory,
    pub reports: Vec<IterationReport>,
    pub status: SolveStatus,
    /// Accepted updates that changed the merit by more than the tolerance.
    pub iterations: usize,
    /// Backward sweeps performed, including the one that refreshes the
    /// returned gains.
    pub passes: usize,
    pub sigma: f64,
}

impl SolverResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn final_report(&self) -> &IterationReport {
        self.reports.last().expect("at least the initial report")
    }
}

/// Cost and violation terms of the merit function on one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MeritTerms {
    pub cost: f64,
    /// `sum_n |[g1_n; g2_{n+1}]|_1`, with `g3` in the last stack.
    pub l1: f64,
    pub violations: ConstraintViolations,
}

impl MeritTerms {
    pub fn merit(&self, sigma: f64) -> f64 {
        self.cost + sigma * self.l1
    }
}

pub fn evaluate_merit_terms(ocp: &Ocp, traj: &Trajectory) -> Result<MeritTerms> {
    let cost = evaluate_total_cost(ocp, traj)?;
    let violations = evaluate_constraint_stack(ocp, traj)?;
    // g2 at n = 0 cannot be influenced and is not part of any stack
    let l1 = violations
        .stages
        .iter()
        .map(|s| s.state_input.lp_norm(1))
        .sum::<f64>()
        + violations
            .stages
            .iter()
            .skip(1)
            .map(|s| s.state.lp_norm(1))
            .sum::<f64>()
        + violations.terminal.lp_norm(1);
    if !l1.is_finite() {
        return Err(Error::Numerical {
            step: ocp.horizon,
            what: "constraint violation is not finite".into(),
        });
    }
    Ok(MeritTerms {
        cost,
        l1,
        violations,
    })
}

pub fn merit(ocp: &Ocp, traj: &Trajectory, sigma: f64) -> Result<f64> {
    Ok(evaluate_merit_terms(ocp, traj)?.merit(sigma))
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub policy: Policy,
    pub trajectory: Trajectory,
    pub terms: MeritTerms,
    pub merit: f64,
    pub alpha: f64,
    /// Merit of the feedback-only (`alpha = 0`) rollout.
    pub reference_merit: f64,
    /// Merit of the full step, `+inf` if it diverged.
    pub full_step_merit: f64,
    /// `false` when no candidate beat the reference; the fields then hold the
    /// best candidate seen (or the reference if all diverged).
    pub accepted: bool,
    pub trials: usize,
}

fn candidate(
    ocp: &Ocp,
    policy: &Policy,
    sigma: f64,
) -> Result<Option<(Trajectory, MeritTerms, f64)>> {
    let traj = match rollout_policy(ocp, policy) {
        Ok(t) => t,
        Err(Error::Divergence { step }) => {
            log::debug!("candidate rollout diverged at step {step}");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    match evaluate_merit_terms(ocp, &traj) {
        Ok(terms) => {
            let m = terms.merit(sigma);
            Ok(Some((traj, terms, m)))
        }
        Err(Error::Numerical { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Backtracking on `alpha = 1, 1/a_d, 1/a_d^2, ...` against the `alpha = 0`
/// reference merit.
pub fn line_search(
    ocp: &Ocp,
    nominal: &Trajectory,
    projections: &[ProjectionStage],
    values: &BackwardSolution,
    sigma: f64,
    settings: &SolverSettings,
) -> Result<LineSearchOutcome> {
    let reference_policy = assemble_policy(projections, values, nominal, 0.0);
    let (ref_traj, ref_terms, reference_merit) =
        candidate(ocp, &reference_policy, sigma)?.ok_or(Error::Divergence { step: 0 })?;

    let mut best: Option<(Policy, Trajectory, MeritTerms, f64, f64)> = None;
    let mut full_step_merit = f64::INFINITY;
    let mut alpha = 1.0;
    for trial in 1..=settings.max_linesearch_steps {
        let policy = assemble_policy(projections, values, nominal, alpha);
        if let Some((traj, terms, m)) = candidate(ocp, &policy, sigma)? {
            if trial == 1 {
                full_step_merit = m;
            }
            if m < reference_merit {
                return Ok(LineSearchOutcome {
                    policy,
                    trajectory: traj,
                    terms,
                    merit: m,
                    alpha,
                    reference_merit,
                    full_step_merit,
                    accepted: true,
                    trials: trial,
                });
            }
            if best.as_ref().is_none_or(|b| m < b.3) {
                best = Some((policy, traj, terms, m, alpha));
            }
        }
        alpha /= settings.alpha_decay;
    }
    let (policy, trajectory, terms, merit, alpha) =
        best.unwrap_or((reference_policy, ref_traj, ref_terms, reference_merit, 0.0));
    Ok(LineSearchOutcome {
        policy,
        trajectory,
        terms,
        merit,
        alpha,
        reference_merit,
        full_step_merit,
        accepted: false,
        trials: settings.max_linesearch_steps,
    })
}

/// One backward sweep about `nominal`: the projections and value functions
/// the line search needs.
pub fn sweep(
    ocp: &Ocp,
    nominal: &Trajectory,
    settings: &SolverSettings,
) -> Result<(Vec<ProjectionStage>, BackwardSolution)> {
    let lq = linearize_and_quadratize(ocp, nominal, settings.rank_tol)?;
    let projections = project_all(&lq, settings.rank_tol)?;
    let projected: Vec<_> = projections
        .iter()
        .zip(&lq.stages)
        .map(|(ps, st)| project_stage(st, ps))
        .collect();
    let values = backward_pass(&projected, &lq.terminal, &settings.backward_options())?;
    Ok((projections, values))
}

fn report(
    iteration: usize,
    terms: &MeritTerms,
    sigma: f64,
    dt: f64,
    alpha: f64,
    accepted: bool,
) -> IterationReport {
    IterationReport {
        iteration,
        merit: terms.merit(sigma),
        cost: terms.cost,
        ise: terms.violations.ise(dt),
        alpha,
        max_violation: terms.violations.per_step_max(),
        accepted,
        converged: false,
    }
}

pub fn solve(
    ocp: &Ocp,
    initial_policy: &Policy,
    settings: &SolverSettings,
) -> Result<SolverResult> {
    solve_observed(ocp, initial_policy, settings, &mut |_: &IterationReport| {})
}

pub fn solve_observed(
    ocp: &Ocp,
    initial_policy: &Policy,
    settings: &SolverSettings,
    observer: &mut dyn IterationObserver,
) -> Result<SolverResult> {
    ocp.validate()?;
    settings.validate()?;
    let residual = ocp.initial_state_residual();
    if residual.amax() > 1e-8 {
        log::warn!(
            "initial state violates the pure-state constraint by {:e}",
            residual.amax()
        );
    }

    let mut trajectory = rollout_policy(ocp, initial_policy)?;
    let mut policy = initial_policy.clone();
    let mut terms = evaluate_merit_terms(ocp, &trajectory)?;
    let mut first_sweep = None;
    let sigma = match settings.sigma {
        Some(s) => s,
        None => {
            let sw = sweep(ocp, &trajectory, settings)?;
            let s = auto_sigma(&terms, sw.1.value_at(0).eval(&DVector::zeros(ocp.x0.len())));
            first_sweep = Some(sw);
            s
        }
    };
    log::debug!("merit weight sigma = {sigma:e}");

    let mut reports = vec![report(0, &terms, sigma, ocp.dt, 0.0, true)];
    observer.on_iteration(&reports[0]);

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut passes = 0;
    let mut stalls = 0;
    // whether the policy gains were computed about the current nominal
    let mut gains_current = false;
    for it in 1..=settings.max_iterations {
        passes += 1;
        let (projections, values) = match first_sweep.take() {
            Some(sw) => sw,
            None => sweep(ocp, &trajectory, settings)?,
        };
        let ls = line_search(ocp, &trajectory, &projections, &values, sigma, settings)?;
        let previous = terms.merit(sigma);
        let scale = previous.abs();

        let mut rep;
        if ls.accepted {
            let significant = previous - ls.merit > settings.merit_rel_tol * scale;
            if significant {
                iterations += 1;
            }
            rep = report(it, &ls.terms, sigma, ocp.dt, ls.alpha, true);
            rep.converged = !significant && rep.ise < settings.ise_max;
            trajectory = ls.trajectory;
            policy = ls.policy;
            terms = ls.terms;
            stalls = 0;
            gains_current = false;
        } else {
            // keep the nominal; a flat full step means the sweep found nothing to improve
            let flat =
                (ls.full_step_merit - ls.reference_merit).abs() <= settings.merit_rel_tol * scale;
            rep = report(it, &terms, sigma, ocp.dt, 0.0, false);
            rep.converged = flat && rep.ise < settings.ise_max;
            if flat && !rep.converged {
                log::warn!(
                    "no descent possible but ISE {:e} exceeds the limit",
                    rep.ise
                );
            }
            if !rep.converged {
                stalls += 1;
                log::debug!("iteration {it}: line search stalled ({stalls} in a row)");
            }
            // the feedback gains from this sweep still describe the nominal
            policy = assemble_policy(&projections, &values, &trajectory, 0.0);
            gains_current = true;
        }
        log::info!(
            "iteration {it}: merit {:.6e} cost {:.6e} ise {:.3e} alpha {}",
            rep.merit,
            rep.cost,
            rep.ise,
            rep.alpha
        );
        let converged = rep.converged;
        observer.on_iteration(&rep);
        reports.push(rep);
        if converged {
            status = SolveStatus::Converged;
            break;
        }
        if stalls >= 2 {
            status = SolveStatus::Stalled;
            break;
        }
    }

    if !gains_current && passes > 0 {
        // refresh the gains so the returned policy is linearized about the returned trajectory
        passes += 1;
        let (projections, values) = sweep(ocp, &trajectory, settings)?;
        policy = assemble_policy(&projections, &values, &trajectory, 0.0);
    }

    Ok(SolverResult {
        policy,
        trajectory,
        reports,
        status,
        iterations,
        passes,
        sigma,
    })
}

/// Merit weight when none is given. It must exceed the predicted cost rise
/// per unit of restored violation, or a step that fixes an infeasible start
/// can look worse than doing nothing.
fn auto_sigma(terms: &MeritTerms, predicted_cost: f64) -> f64 {
    let base = 10.0 * terms.cost / (1.0 + terms.l1);
    let restore = if terms.l1 > 0.0 {
        2.0 * (predicted_cost - terms.cost) / terms.l1
    } else {
        0.0
    };
    let s = base.max(restore);
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Stationary discrete Riccati solution by fixed-point iteration. Returns
/// `(K, S)` with the stabilizing law `u = -K x`.
pub fn infinite_horizon_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut s = q.clone();
    for _ in 0..100_000 {
        let bts = b.tr_mul(&s);
        let h = r + &bts * b;
        let k = h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Definition("LQR input Hessian is not positive definite".into()))?
            .solve(&(&bts * a));
        let next = symmetrize(&(q + a.tr_mul(&(&s * a)) - (bts * a).tr_mul(&k)));
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let change = (&next - &s).amax();
        s = next;
        if change <= 1e-13 * s.amax().max(1.0) {
            return Ok((k, s));
        }
    }
    Err(Error::Numerical {
        step: 0,
        what: "infinite-horizon Riccati iteration did not converge".into(),
    })
}

/// `u = u_ss - K (x - x0)` with `K` the infinite-horizon LQR gain of the
/// dynamics and cost linearized at `(x0, u_ss)`.
pub fn lqr_initial_policy(ocp: &Ocp, u_ss: &DVector<f64>) -> Result<Policy> {
    let (_, a, b) = ocp.dynamics.step_with_jacobians(&ocp.x0, u_ss, 0);
    let c = ocp.stage_cost.expansion(&ocp.x0, u_ss, 0);
    let q = symmetrize(&c.hess_xx);
    let (k, _) = infinite_horizon_lqr(&a, &b, &q, &symmetrize(&c.hess_uu))?;
    Ok(Policy::affine(
        u_ss.clone(),
        -k,
        ocp.x0.clone(),
        ocp.horizon,
    ))
}
