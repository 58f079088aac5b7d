//! CSV files written by `solve`: the trajectory, the iteration log and a
//! one-row summary. Floats use the shortest representation that reads back
//! to the same value.

use std::path::Path;

use nalgebra::DVector;
use pilqr::solver::IterationReport;
use pilqr::{SolverResult, Trajectory};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad {file} contents: {what}")]
    Format { file: &'static str, what: String },
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn parse(field: &str, file: &'static str) -> Result<f64, OutputError> {
    field.trim().parse().map_err(|_| OutputError::Format {
        file,
        what: format!("'{field}' is not a number"),
    })
}

/// Columns `n, t, x0.., u0..`; the last row has empty input fields.
pub fn write_trajectory(path: &Path, traj: &Trajectory, dt: f64) -> Result<(), OutputError> {
    let m = traj.states[0].len();
    let p = traj.inputs.first().map_or(0, |u| u.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["n".to_string(), "t".to_string()];
    header.extend((0..m).map(|i| format!("x{i}")));
    header.extend((0..p).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for (n, x) in traj.states.iter().enumerate() {
        let mut row = vec![n.to_string(), num(n as f64 * dt)];
        row.extend(x.iter().map(|&v| num(v)));
        match traj.inputs.get(n) {
            Some(u) => row.extend(u.iter().map(|&v| num(v))),
            None => row.extend(std::iter::repeat_n(String::new(), p)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, OutputError> {
    const FILE: &str = TRAJECTORY_FILE;
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let m = header.iter().filter(|h| h.starts_with('x')).count();
    let p = header.iter().filter(|h| h.starts_with('u')).count();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x: Result<Vec<f64>, _> = (0..m).map(|i| parse(&rec[2 + i], FILE)).collect();
        states.push(DVector::from_vec(x?));
        if p > 0 && !rec[2 + m].is_empty() {
            let u: Result<Vec<f64>, _> = (0..p).map(|i| parse(&rec[2 + m + i], FILE)).collect();
            inputs.push(DVector::from_vec(u?));
        }
    }
    if p == 0 {
        inputs = vec![DVector::zeros(0); states.len().saturating_sub(1)];
    }
    Trajectory::new(states, inputs).map_err(|e| OutputError::Format {
        file: FILE,
        what: e.to_string(),
    })
}

pub fn write_iterations(path: &Path, reports: &[IterationReport]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "merit", "cost", "ise", "alpha", "accepted"])?;
    for r in reports {
        w.write_record([
            r.iteration.to_string(),
            num(r.merit),
            num(r.cost),
            num(r.ise),
            num(r.alpha),
            r.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub problem: String,
    pub status: String,
    pub converged: bool,
    pub iterations: usize,
    pub passes: usize,
    pub horizon: usize,
    pub dt: f64,
    pub sigma: f64,
    pub merit: f64,
    pub cost: f64,
    pub ise: f64,
    pub wall_time_s: f64,
}

const SUMMARY_HEADER: [&str; 12] = [
    "problem",
    "status",
    "converged",
    "iterations",
    "passes",
    "horizon",
    "dt",
    "sigma",
    "merit",
    "cost",
    "ise",
    "wall_time_s",
];

impl Summary {
    pub fn new(problem: &str, result: &SolverResult, dt: f64, wall_time_s: f64) -> Self {
        let last = result.final_report();
        Self {
            problem: problem.to_string(),
            status: format!("{:?}", result.status),
            converged: result.converged(),
            iterations: result.iterations,
            passes: result.passes,
            horizon: result.trajectory.horizon(),
            dt,
            sigma: result.sigma,
            merit: last.merit,
            cost: last.cost,
            ise: last.ise,
            wall_time_s,
        }
    }
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    w.write_record([
        s.problem.clone(),
        s.status.clone(),
        s.converged.to_string(),
        s.iterations.to_string(),
        s.passes.to_string(),
        s.horizon.to_string(),
        num(s.dt),
        num(s.sigma),
        num(s.merit),
        num(s.cost),
        num(s.ise),
        num(s.wall_time_s),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Summary, OutputError> {
    const FILE: &str = SUMMARY_FILE;
    let mut r = csv::Reader::from_path(path)?;
    let rec = r.records().next().ok_or(OutputError::Format {
        file: FILE,
        what: "no data row".into(),
    })??;
    let field = |name: &str| {
        let i = SUMMARY_HEADER
            .iter()
            .position(|h| *h == name)
            .expect("known column");
        rec.get(i).unwrap_or_default().to_string()
    };
    let int = |name: &str| {
        field(name)
            .parse::<usize>()
            .map_err(|_| OutputError::Format {
                file: FILE,
                what: format!("column {name}"),
            })
    };
    Ok(Summary {
        problem: field("problem"),
        status: field("status"),
        converged: field("converged") == "true",
        iterations: int("iterations")?,
        passes: int("passes")?,
        horizon: int("horizon")?,
        dt: parse(&field("dt"), FILE)?,
        sigma: parse(&field("sigma"), FILE)?,
        merit: parse(&field("merit"), FILE)?,
        cost: parse(&field("cost"), FILE)?,
        ise: parse(&field("ise"), FILE)?,
        wall_time_s: parse(&field("wall_time_s"), FILE)?,
    })
}
