//! Central finite differences.
//!
//! Used as the fallback derivative provider for problems that do not supply
//! analytic derivatives, and as an independent oracle in tests.

use nalgebra::{DMatrix, DVector};

/// Relative step for first derivatives.
pub const FD_STEP: f64 = 1e-6;
/// Relative step for second derivatives (second differences need a larger
/// step to stay clear of cancellation).
pub const FD_HESSIAN_STEP: f64 = 1e-4;

fn step_size(point: &DVector<f64>, h_rel: f64) -> f64 {
    h_rel * (1.0 + point.norm())
}

/// Jacobian of `f` at `point` with step `h_rel * (1 + |point|)`.
pub fn finite_difference_jacobian<F>(f: F, point: &DVector<f64>, h_rel: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let h = step_size(point, h_rel);
    let mut z = point.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..point.len() {
        z[j] = point[j] + h;
        let plus = f(&z);
        z[j] = point[j] - h;
        let minus = f(&z);
        z[j] = point[j];
        let col = (plus - minus) / (2.0 * h);
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), point.len()));
        jac.set_column(j, &col);
    }
    jac.unwrap_or_else(|| DMatrix::zeros(f(point).len(), 0))
}

pub fn finite_difference_gradient<F>(f: F, point: &DVector<f64>, h_rel: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let h = step_size(point, h_rel);
    let mut z = point.clone();
    DVector::from_fn(point.len(), |j, _| {
        z[j] = point[j] + h;
        let plus = f(&z);
        z[j] = point[j] - h;
        let minus = f(&z);
        z[j] = point[j];
        (plus - minus) / (2.0 * h)
    })
}

/// Symmetric Hessian by second differences.
pub fn finite_difference_hessian<F>(f: F, point: &DVector<f64>, h_rel: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = point.len();
    let h = step_size(point, h_rel);
    let f0 = f(point);
    let mut z = point.clone();
    let mut eval = |i: usize, si: f64, j: usize, sj: f64| {
        z.copy_from(point);
        z[i] += si * h;
        z[j] += sj * h;
        f(&z)
    };
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = eval(i, 1.0, i, 0.0);
        let fm = eval(i, -1.0, i, 0.0);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let v = (eval(i, 1.0, j, 1.0) - eval(i, 1.0, j, -1.0) - eval(i, -1.0, j, 1.0)
                + eval(i, -1.0, j, -1.0))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Concatenate a state and an input into one vector.
pub(crate) fn join(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    crate::linalg::vstack_vec(x, u)
}

pub(crate) fn split(z: &DVector<f64>, m: usize) -> (DVector<f64>, DVector<f64>) {
    (
        z.rows(0, m).into_owned(),
        z.rows(m, z.len() - m).into_owned(),
    )
}
