//! Brute-force reference solution of an equality-constrained LQ problem: all
//! states and inputs become decision variables of one dense KKT system.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rollout::{ConstraintStage, LqStage, TerminalStage};

#[derive(Debug, Clone)]
pub struct KktSolution {
    /// `N + 1` entries, the first equal to the given initial deviation.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
    /// Largest absolute residual of the KKT system.
    pub residual: f64,
}

/// Minimize the LQ cost subject to the linearized dynamics, the state-input
/// rows at every step and the pure-state rows at steps `1..=N`.
pub fn dense_kkt_oracle(
    stages: &[LqStage],
    constraints: &[ConstraintStage],
    terminal: &TerminalStage,
    dx0: &DVector<f64>,
) -> Result<KktSolution> {
    let horizon = stages.len();
    if horizon == 0 || constraints.len() != horizon {
        return Err(Error::Definition(
            "oracle needs one constraint stage per LQ stage".into(),
        ));
    }
    let m = dx0.len();
    let p = stages[0].b.ncols();
    let iu = |n: usize| n * p;
    let ix = |n: usize| horizon * p + (n - 1) * m;
    let nv = horizon * (p + m);

    let mut hess = DMatrix::zeros(nv, nv);
    let mut grad = DVector::zeros(nv);
    for (n, st) in stages.iter().enumerate() {
        hess.view_mut((iu(n), iu(n)), (p, p))
            .add_assign(&st.hess_uu);
        grad.rows_mut(iu(n), p).add_assign(&st.grad_u);
        if n == 0 {
            grad.rows_mut(iu(0), p).add_assign(&(&st.hess_ux * dx0));
        } else {
            hess.view_mut((ix(n), ix(n)), (m, m))
                .add_assign(&st.hess_xx);
            hess.view_mut((iu(n), ix(n)), (p, m))
                .add_assign(&st.hess_ux);
            hess.view_mut((ix(n), iu(n)), (m, p))
                .add_assign(&st.hess_ux.transpose());
            grad.rows_mut(ix(n), m).add_assign(&st.grad_x);
        }
    }
    hess.view_mut((ix(horizon), ix(horizon)), (m, m))
        .add_assign(&terminal.hess);
    grad.rows_mut(ix(horizon), m).add_assign(&terminal.grad);

    // equality rows: dynamics, state-input, pure state, terminal
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut push_block = |jac_blocks: &[(usize, &DMatrix<f64>)], rhs: &DVector<f64>| {
        for i in 0..rhs.len() {
            let mut row = DVector::zeros(nv);
            for (col, block) in jac_blocks {
                row.rows_mut(*col, block.ncols())
                    .add_assign(&block.row(i).transpose());
            }
            rows.push((row, rhs[i]));
        }
    };
    let eye = DMatrix::<f64>::identity(m, m);
    for (n, (st, c)) in stages.iter().zip(constraints).enumerate() {
        let neg_b = -&st.b;
        if n == 0 {
            push_block(&[(ix(1), &eye), (iu(0), &neg_b)], &(&st.a * dx0));
            push_block(
                &[(iu(0), &c.input_jac_u)],
                &(&c.input_rhs - &c.input_jac_x * dx0),
            );
        } else {
            let neg_a = -&st.a;
            push_block(
                &[(ix(n + 1), &eye), (ix(n), &neg_a), (iu(n), &neg_b)],
                &DVector::zeros(m),
            );
            push_block(
                &[(ix(n), &c.input_jac_x), (iu(n), &c.input_jac_u)],
                &c.input_rhs,
            );
            push_block(&[(ix(n), &c.state_jac)], &c.state_rhs);
        }
    }
    push_block(&[(ix(horizon), &terminal.state_jac)], &terminal.state_rhs);

    let nc = rows.len();
    let mut kkt = DMatrix::zeros(nv + nc, nv + nc);
    let mut rhs = DVector::zeros(nv + nc);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&hess);
    rhs.rows_mut(0, nv).copy_from(&(-&grad));
    for (k, (row, b)) in rows.iter().enumerate() {
        kkt.view_mut((nv + k, 0), (1, nv))
            .copy_from(&row.transpose());
        kkt.view_mut((0, nv + k), (nv, 1)).copy_from(row);
        rhs[nv + k] = *b;
    }
    // full pivoting: the fully determined cases have large pivot growth under partial pivoting
    let sol = kkt
        .clone()
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Infeasible {
            step: 0,
            what: "KKT matrix is singular".into(),
        })?;
    let residual = (&kkt * &sol - &rhs).amax();
    if !(residual <= 1e-8 * (1.0 + rhs.amax())) {
        return Err(Error::Infeasible {
            step: 0,
            what: format!("KKT solve residual {residual:e}"),
        });
    }

    let mut states = vec![dx0.clone()];
    states.extend((1..=horizon).map(|n| sol.rows(ix(n), m).into_owned()));
    let inputs: Vec<_> = (0..horizon)
        .map(|n| sol.rows(iu(n), p).into_owned())
        .collect();
    let cost = stages
        .iter()
        .enumerate()
        .map(|(n, st)| st.cost(&states[n], &inputs[n]))
        .sum::<f64>()
        + terminal.cost(&states[horizon]);
    Ok(KktSolution {
        states,
        inputs,
        cost,
        residual,
    })
}
