//! Benchmark problems and an independent dense reference solver.

pub mod double_integrator;
pub mod kkt;
pub mod planar_arm;
pub mod point_mass;
pub mod random_lq;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::Ocp;
use crate::riccati::Policy;
use crate::rollout::Integrator;
use crate::solver::SolverSettings;

pub use double_integrator::{
    make_double_integrator, DoubleIntegratorConstraint, DoubleIntegratorOptions,
};
pub use kkt::{dense_kkt_oracle, KktSolution};
pub use planar_arm::make_planar_arm;
pub use point_mass::make_point_mass_surface;
pub use random_lq::make_random_constrained_lq;

/// A ready-to-solve problem with a stabilizing initial policy.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub ocp: Ocp,
    pub initial_policy: Policy,
    /// Input holding the initial state in equilibrium.
    pub steady_input: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemParams {
    pub horizon: usize,
    pub dt: f64,
    pub seed: u64,
}

pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    /// Whether every pure-state constraint sees the input one step ahead.
    pub relative_degree_one: bool,
    pub default_horizon_seconds: f64,
    pub default_dt: f64,
    /// Merit weight per second of horizon. The L1 term sums violations over
    /// steps, so the weight that balances it scales with `dt`. `None` leaves
    /// the solver's automatic choice in place.
    pub merit_rate: Option<f64>,
    pub build: fn(&ProblemParams) -> Result<ProblemInstance>,
}

impl std::fmt::Debug for CatalogEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CatalogEntry")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl CatalogEntry {
    pub fn default_params(&self) -> ProblemParams {
        ProblemParams {
            horizon: (self.default_horizon_seconds / self.default_dt).round() as usize,
            dt: self.default_dt,
            seed: 1,
        }
    }

    /// Default solver settings with this problem's merit weight at `dt`.
    pub fn solver_settings(&self, dt: f64) -> SolverSettings {
        SolverSettings {
            sigma: self.merit_rate.map(|r| r * dt),
            ..Default::default()
        }
    }
}

fn double_integrator(
    p: &ProblemParams,
    constraint: DoubleIntegratorConstraint,
    integrator: Integrator,
) -> Result<ProblemInstance> {
    make_double_integrator(&DoubleIntegratorOptions {
        constraint,
        integrator,
        horizon: p.horizon,
        dt: p.dt,
    })
}

/// Dimensions of the catalog's random LQ family.
pub const RANDOM_LQ_STATE_DIM: usize = 4;
pub const RANDOM_LQ_INPUT_DIM: usize = 3;

static CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        name: "double_integrator",
        description: "1D double integrator, unconstrained",
        relative_degree_one: true,
        default_horizon_seconds: 2.0,
        default_dt: 0.02,
        merit_rate: None,
        build: |p| double_integrator(p, DoubleIntegratorConstraint::None, Integrator::Rk4),
    },
    CatalogEntry {
        name: "double_integrator_position",
        description: "2D double integrator with the positions tied together",
        relative_degree_one: true,
        default_horizon_seconds: 2.0,
        default_dt: 0.02,
        merit_rate: None,
        build: |p| double_integrator(p, DoubleIntegratorConstraint::Position, Integrator::Rk4),
    },
    CatalogEntry {
        name: "double_integrator_state_input",
        description: "2D double integrator with a state-input constraint",
        relative_degree_one: true,
        default_horizon_seconds: 2.0,
        default_dt: 0.02,
        merit_rate: None,
        build: |p| double_integrator(p, DoubleIntegratorConstraint::StateInput, Integrator::Rk4),
    },
    CatalogEntry {
        name: "double_integrator_euler",
        description:
            "position-constrained double integrator under forward Euler (relative degree two)",
        relative_degree_one: false,
        default_horizon_seconds: 2.0,
        default_dt: 0.02,
        merit_rate: None,
        build: |p| double_integrator(p, DoubleIntegratorConstraint::Position, Integrator::Euler),
    },
    CatalogEntry {
        name: "point_mass_surface",
        description: "3D point mass constrained to a curved surface",
        relative_degree_one: true,
        default_horizon_seconds: 3.0,
        default_dt: 0.01,
        merit_rate: Some(300.0),
        build: |p| make_point_mass_surface(p.horizon, p.dt),
    },
    CatalogEntry {
        name: "planar_arm",
        description: "2-link arm with the end effector on a line",
        relative_degree_one: true,
        default_horizon_seconds: 3.0,
        default_dt: 0.01,
        merit_rate: Some(300.0),
        build: |p| make_planar_arm(p.horizon, p.dt),
    },
    CatalogEntry {
        name: "random_lq",
        description: "seeded random constrained LQ problem",
        relative_degree_one: true,
        default_horizon_seconds: 20.0,
        default_dt: 1.0,
        merit_rate: None,
        build: |p| {
            let mut inst = make_random_constrained_lq(
                p.seed,
                RANDOM_LQ_STATE_DIM,
                RANDOM_LQ_INPUT_DIM,
                p.horizon,
            )?;
            inst.ocp.dt = p.dt;
            Ok(inst)
        },
    },
];

pub fn catalog() -> &'static [CatalogEntry] {
    CATALOG
}

pub fn lookup(name: &str) -> Option<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.name == name)
}

pub fn build(name: &str, params: &ProblemParams) -> Result<ProblemInstance> {
    let entry =
        lookup(name).ok_or_else(|| Error::Definition(format!("unknown problem '{name}'")))?;
    (entry.build)(params)
}
