//! Seeded random constrained LQ problems for oracle comparisons.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::vstack;
use crate::problem::{
    LinearDynamics, LinearStateConstraint, LinearStateInputConstraint, Ocp, QuadraticStageCost,
    QuadraticTerminalCost,
};
use crate::riccati::Policy;

use super::ProblemInstance;

/// Stacked input matrices with a worse condition number are resampled.
pub const MAX_STACK_CONDITION: f64 = 1e6;
const SPECTRAL_RADIUS: f64 = 0.95;
/// Samples whose constraint-restoring feedback `A + B U` is unstable are
/// resampled: without decay the dense oracle loses all accuracy over long
/// horizons.
pub const MAX_RESTORED_RADIUS: f64 = 1.0;
const MAX_ATTEMPTS: usize = 1000;

/// Constraint row counts chosen for one generated problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomLqShape {
    pub state_input_rows: usize,
    pub state_rows: usize,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // sum of uniforms is close enough to normal for test data and needs no extra crate
    DMatrix::from_fn(rows, cols, |_, _| {
        (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.866
    })
}

fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-scale..scale))
}

fn condition(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    sv.max() / sv.min()
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `A - B [E; C B]^+ [D; C A]`.
fn restored_dynamics(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d: &DMatrix<f64>,
    e: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> DMatrix<f64> {
    let lhs_u = vstack(e, &(c * b));
    if lhs_u.nrows() == 0 {
        return a.clone();
    }
    let lhs_x = vstack(d, &(c * a));
    let pinv = lhs_u.pseudo_inverse(1e-12).expect("non-negative tolerance");
    a - b * pinv * lhs_x
}

fn stable_matrix(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, m, m) / (m as f64).sqrt();
    let radius = spectral_radius(&a);
    if radius > SPECTRAL_RADIUS {
        a * (SPECTRAL_RADIUS / radius)
    } else {
        a
    }
}

fn psd_matrix(rng: &mut ChaCha8Rng, m: usize, floor: f64) -> DMatrix<f64> {
    let l = gaussian_matrix(rng, m, m);
    &l * l.transpose() / m as f64 + DMatrix::identity(m, m) * floor
}

/// Random stable dynamics, jointly convex cost and full-rank constraints of
/// relative degree one; deterministic per seed.
pub fn make_random_constrained_lq(
    seed: u64,
    m: usize,
    p: usize,
    horizon: usize,
) -> Result<ProblemInstance> {
    if m == 0 || p == 0 || horizon == 0 {
        return Err(Error::Definition(
            "random LQ needs positive dimensions".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = draw_shape(&mut rng, m, p);
    let (c1, c2) = (shape.state_input_rows, shape.state_rows);

    let a = stable_matrix(&mut rng, m);
    let (b, d, e, c) = (0..MAX_ATTEMPTS)
        .find_map(|_| {
            let b = gaussian_matrix(&mut rng, m, p);
            let d = gaussian_matrix(&mut rng, c1, m);
            let e = gaussian_matrix(&mut rng, c1, p);
            let c = gaussian_matrix(&mut rng, c2, m);
            let stack = vstack(&e, &(&c * &b));
            (condition(&stack) <= MAX_STACK_CONDITION
                && condition(&c) <= MAX_STACK_CONDITION
                && spectral_radius(&restored_dynamics(&a, &b, &d, &e, &c)) <= MAX_RESTORED_RADIUS)
                .then_some((b, d, e, c))
        })
        .ok_or_else(|| {
            Error::Definition(format!(
                "seed {seed}: no well-conditioned constraint sample"
            ))
        })?;

    let w = psd_matrix(&mut rng, m + p, 0.1);
    let stage = QuadraticStageCost::new(
        w.view((0, 0), (m, m)).into_owned(),
        w.view((m, m), (p, p)).into_owned(),
    )
    .with_cross(w.view((m, 0), (p, m)).into_owned())
    .with_reference(
        uniform_vector(&mut rng, m, 1.0),
        uniform_vector(&mut rng, p, 1.0),
    );
    let terminal = QuadraticTerminalCost {
        q: psd_matrix(&mut rng, m, 0.1),
        x_ref: uniform_vector(&mut rng, m, 1.0),
    };

    let x0 = uniform_vector(&mut rng, m, 1.0);
    let mut ocp = Ocp::new(
        Arc::new(LinearDynamics { a, b }),
        Arc::new(stage),
        Arc::new(terminal),
        horizon,
        x0.clone(),
        1.0,
    );
    if c1 > 0 {
        ocp = ocp.with_state_input_constraint(Arc::new(LinearStateInputConstraint {
            d,
            e,
            offsets: (0..horizon)
                .map(|_| uniform_vector(&mut rng, c1, 0.5))
                .collect(),
        }));
    }
    if c2 > 0 {
        let mut offsets = vec![&c * &x0];
        offsets.extend((1..=horizon).map(|_| uniform_vector(&mut rng, c2, 0.5)));
        let stage_rows = Arc::new(LinearStateConstraint { c, offsets });
        ocp = ocp
            .with_state_constraint(stage_rows.clone())
            .with_terminal_constraint(stage_rows);
    }
    log::trace!("random LQ seed {seed}: {shape:?}");
    Ok(ProblemInstance {
        initial_policy: Policy::open_loop(vec![DVector::zeros(p); horizon], m),
        steady_input: DVector::zeros(p),
        ocp,
    })
}

/// The constraint shape a seed produces for input dimension `p`.
pub fn random_lq_shape(seed: u64, m: usize, p: usize) -> RandomLqShape {
    draw_shape(&mut ChaCha8Rng::seed_from_u64(seed), m, p)
}

fn draw_shape(rng: &mut ChaCha8Rng, m: usize, p: usize) -> RandomLqShape {
    let c1 = rng.gen_range(0..p);
    let c2 = rng.gen_range(0..=(p - c1).min(m));
    RandomLqShape {
        state_input_rows: c1,
        state_rows: c2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::evaluate_total_cost;
    use crate::rollout::rollout_policy;

    #[test]
    fn deterministic_per_seed() {
        let a = make_random_constrained_lq(7, 4, 3, 10).unwrap();
        let b = make_random_constrained_lq(7, 4, 3, 10).unwrap();
        let ta = rollout_policy(&a.ocp, &a.initial_policy).unwrap();
        let tb = rollout_policy(&b.ocp, &b.initial_policy).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(
            evaluate_total_cost(&a.ocp, &ta).unwrap(),
            evaluate_total_cost(&b.ocp, &tb).unwrap()
        );
    }

    #[test]
    fn initial_state_is_feasible_and_problem_valid() {
        for seed in 0..20 {
            let inst = make_random_constrained_lq(seed, 5, 3, 8).unwrap();
            inst.ocp.validate().unwrap();
            assert!(inst.ocp.initial_state_residual().amax() < 1e-14);
            let shape = random_lq_shape(seed, 5, 3);
            assert_eq!(inst.ocp.state_input_dim(0), shape.state_input_rows);
        }
    }

    #[test]
    fn dynamics_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = stable_matrix(&mut rng, 6);
        assert!(spectral_radius(&a) <= SPECTRAL_RADIUS + 1e-12);
    }
}
