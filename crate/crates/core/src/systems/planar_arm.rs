//! Two-link planar arm with point masses at the link tips. The end effector
//! must stay on a straight line through its initial position while the
//! joints are driven towards a pose whose end effector is off that line.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::Result;
use crate::problem::{Ocp, QuadraticStageCost, QuadraticTerminalCost, StateConstraint};
use crate::rollout::{ContinuousModelAdapter, VectorField};
use crate::solver::lqr_initial_policy;

use super::ProblemInstance;

#[derive(Debug, Clone, Copy)]
pub struct ArmParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub gravity: f64,
    pub damping: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 0.5,
            l2: 0.5,
            gravity: 9.81,
            damping: 0.1,
        }
    }
}

/// Joint angles measured from the horizontal, y pointing up.
pub fn initial_pose() -> Vector2<f64> {
    Vector2::new(-0.4, 1.2)
}

pub fn target_pose() -> Vector2<f64> {
    Vector2::new(-0.2, 1.0)
}

/// Direction of the admissible end-effector line.
pub fn line_direction() -> Vector2<f64> {
    Vector2::new(0.0, 1.0)
}

impl ArmParams {
    pub fn forward_kinematics(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let s = q.x + q.y;
        Vector2::new(
            self.l1 * q.x.cos() + self.l2 * s.cos(),
            self.l1 * q.x.sin() + self.l2 * s.sin(),
        )
    }

    pub fn kinematic_jacobian(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let s = q.x + q.y;
        Matrix2::new(
            -self.l1 * q.x.sin() - self.l2 * s.sin(),
            -self.l2 * s.sin(),
            self.l1 * q.x.cos() + self.l2 * s.cos(),
            self.l2 * s.cos(),
        )
    }

    pub fn mass_matrix(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let k = self.m2 * self.l1 * self.l2;
        let c2 = q.y.cos();
        let m11 =
            (self.m1 + self.m2) * self.l1 * self.l1 + self.m2 * self.l2 * self.l2 + 2.0 * k * c2;
        let m12 = self.m2 * self.l2 * self.l2 + k * c2;
        Matrix2::new(m11, m12, m12, self.m2 * self.l2 * self.l2)
    }

    fn coriolis(&self, q: &Vector2<f64>, qd: &Vector2<f64>) -> Vector2<f64> {
        let h = self.m2 * self.l1 * self.l2 * q.y.sin();
        Vector2::new(-h * (2.0 * qd.x * qd.y + qd.y * qd.y), h * qd.x * qd.x)
    }

    pub fn gravity_torque(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let g = self.gravity;
        let c12 = (q.x + q.y).cos();
        Vector2::new(
            (self.m1 + self.m2) * g * self.l1 * q.x.cos() + self.m2 * g * self.l2 * c12,
            self.m2 * g * self.l2 * c12,
        )
    }

    fn acceleration(
        &self,
        q: &Vector2<f64>,
        qd: &Vector2<f64>,
        tau: &Vector2<f64>,
    ) -> Vector2<f64> {
        let rhs = tau - self.coriolis(q, qd) - self.gravity_torque(q) - qd * self.damping;
        self.mass_matrix(q)
            .try_inverse()
            .expect("mass matrix is positive definite")
            * rhs
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PlanarArmField {
    pub params: ArmParams,
}

fn unpack(x: &DVector<f64>) -> (Vector2<f64>, Vector2<f64>) {
    (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]))
}

impl VectorField for PlanarArmField {
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (q, qd) = unpack(x);
        let qdd = self.params.acceleration(&q, &qd, &Vector2::new(u[0], u[1]));
        DVector::from_vec(vec![qd.x, qd.y, qdd.x, qdd.y])
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = &self.params;
        let (q, qd) = unpack(x);
        let minv = p
            .mass_matrix(&q)
            .try_inverse()
            .expect("mass matrix is positive definite");
        let qdd = p.acceleration(&q, &qd, &Vector2::new(u[0], u[1]));

        let k = p.m2 * p.l1 * p.l2;
        let (s2, c2) = q.y.sin_cos();
        let (s1, s12) = (q.x.sin(), (q.x + q.y).sin());
        let g = p.gravity;
        // d(M qdd)/dq2 with qdd held fixed
        let dm_dq2 = Matrix2::new(-2.0 * k * s2, -k * s2, -k * s2, 0.0);
        let dc_dq2 = Vector2::new(
            -k * c2 * (2.0 * qd.x * qd.y + qd.y * qd.y),
            k * c2 * qd.x * qd.x,
        );
        let dg_dq1 = Vector2::new(
            -(p.m1 + p.m2) * g * p.l1 * s1 - p.m2 * g * p.l2 * s12,
            -p.m2 * g * p.l2 * s12,
        );
        let dg_dq2 = Vector2::new(-p.m2 * g * p.l2 * s12, -p.m2 * g * p.l2 * s12);
        let h = k * s2;
        let dc_dqd = Matrix2::new(
            -2.0 * h * qd.y,
            -2.0 * h * (qd.x + qd.y),
            2.0 * h * qd.x,
            0.0,
        );

        let col_q1 = -(minv * dg_dq1);
        let col_q2 = -(minv * (dm_dq2 * qdd + dc_dq2 + dg_dq2));
        let d_qd = -(minv * (dc_dqd + Matrix2::identity() * p.damping));

        let mut fx = DMatrix::zeros(4, 4);
        fx[(0, 2)] = 1.0;
        fx[(1, 3)] = 1.0;
        for i in 0..2 {
            fx[(2 + i, 0)] = col_q1[i];
            fx[(2 + i, 1)] = col_q2[i];
            fx[(2 + i, 2)] = d_qd[(i, 0)];
            fx[(2 + i, 3)] = d_qd[(i, 1)];
        }
        let mut fu = DMatrix::zeros(4, 2);
        fu.view_mut((2, 0), (2, 2)).copy_from(&minv);
        (fx, fu)
    }
}

/// `n' (fk(q) - anchor) = 0` with `n` normal to the line direction.
#[derive(Debug, Clone, Copy)]
pub struct EndEffectorLine {
    pub params: ArmParams,
    pub anchor: Vector2<f64>,
    pub normal: Vector2<f64>,
}

impl EndEffectorLine {
    pub fn through_initial_pose(params: ArmParams) -> Self {
        let d = line_direction();
        Self {
            params,
            anchor: params.forward_kinematics(&initial_pose()),
            normal: Vector2::new(-d.y, d.x),
        }
    }

    pub fn deviation(&self, x: &DVector<f64>) -> f64 {
        let (q, _) = unpack(x);
        self.normal
            .dot(&(self.params.forward_kinematics(&q) - self.anchor))
    }
}

impl StateConstraint for EndEffectorLine {
    fn dim(&self, _n: usize) -> usize {
        1
    }
    fn value(&self, x: &DVector<f64>, _n: usize) -> DVector<f64> {
        DVector::from_element(1, self.deviation(x))
    }
    fn jacobian(&self, x: &DVector<f64>, _n: usize) -> DMatrix<f64> {
        let (q, _) = unpack(x);
        let row = self.normal.transpose() * self.params.kinematic_jacobian(&q);
        DMatrix::from_row_slice(1, 4, &[row[0], row[1], 0.0, 0.0])
    }
}

pub fn make_planar_arm(horizon: usize, dt: f64) -> Result<ProblemInstance> {
    let params = ArmParams::default();
    let q0 = initial_pose();
    let qt = target_pose();
    let x_ref = DVector::from_vec(vec![qt.x, qt.y, 0.0, 0.0]);
    let u_ref = DVector::from_column_slice(params.gravity_torque(&qt).as_slice());
    let stage = QuadraticStageCost::new(
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.1, 0.1])),
        DMatrix::identity(2, 2) * 0.05,
    )
    .with_reference(x_ref.clone(), u_ref)
    .with_scale(dt);
    let terminal = QuadraticTerminalCost {
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 100.0, 10.0, 10.0])),
        x_ref,
    };
    let line = Arc::new(EndEffectorLine::through_initial_pose(params));
    let ocp = Ocp::new(
        Arc::new(ContinuousModelAdapter::new(PlanarArmField { params }, dt)),
        Arc::new(stage),
        Arc::new(terminal),
        horizon,
        DVector::from_vec(vec![q0.x, q0.y, 0.0, 0.0]),
        dt,
    )
    .with_state_constraint(line.clone())
    .with_terminal_constraint(line);
    let steady = DVector::from_column_slice(params.gravity_torque(&q0).as_slice());
    let initial_policy = lqr_initial_policy(&ocp, &steady)?;
    Ok(ProblemInstance {
        ocp,
        initial_policy,
        steady_input: steady,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::finite_diff::{finite_difference_jacobian, join, split, FD_STEP};
    use approx::assert_relative_eq;

    #[test]
    fn initial_pose_is_on_the_line_and_target_is_not() {
        let line = EndEffectorLine::through_initial_pose(ArmParams::default());
        let x0 = DVector::from_vec(vec![initial_pose().x, initial_pose().y, 0.0, 0.0]);
        assert_eq!(line.deviation(&x0), 0.0);
        let xt = DVector::from_vec(vec![target_pose().x, target_pose().y, 0.0, 0.0]);
        assert!(line.deviation(&xt).abs() > 0.02);
    }

    #[test]
    fn kinematic_jacobian_matches_finite_differences() {
        let p = ArmParams::default();
        for q in [
            Vector2::new(0.1, 0.7),
            Vector2::new(-1.2, 2.0),
            Vector2::new(2.5, -0.4),
        ] {
            let fd = finite_difference_jacobian(
                |z| {
                    let v = p.forward_kinematics(&Vector2::new(z[0], z[1]));
                    DVector::from_vec(vec![v.x, v.y])
                },
                &DVector::from_vec(vec![q.x, q.y]),
                FD_STEP,
            );
            let j = p.kinematic_jacobian(&q);
            assert_relative_eq!(
                DMatrix::from_row_slice(2, 2, j.transpose().as_slice()),
                fd,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn field_jacobians_match_finite_differences() {
        let f = PlanarArmField::default();
        let x = DVector::from_vec(vec![0.3, 1.1, -0.8, 1.5]);
        let u = DVector::from_vec(vec![2.0, -1.0]);
        let (fx, fu) = f.jacobians(&x, &u);
        let fd = finite_difference_jacobian(
            |z| {
                let (x, u) = split(z, 4);
                f.eval(&x, &u)
            },
            &join(&x, &u),
            FD_STEP,
        );
        assert_relative_eq!(fx, fd.columns(0, 4).into_owned(), epsilon = 1e-6);
        assert_relative_eq!(fu, fd.columns(4, 2).into_owned(), epsilon = 1e-6);
    }

    #[test]
    fn gravity_compensation_holds_the_pose() {
        let p = ArmParams::default();
        let q = initial_pose();
        let acc = p.acceleration(&q, &Vector2::zeros(), &p.gravity_torque(&q));
        assert!(acc.norm() < 1e-12);
    }
}
