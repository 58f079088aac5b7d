//! `pilqr solve <config>`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use pilqr::systems::build;
use pilqr::{solve, SolverResult};

use crate::config::RunConfig;
use crate::output::{self, Summary, ITERATIONS_FILE, SUMMARY_FILE, TRAJECTORY_FILE};
use crate::{EXIT_ABORTED, EXIT_CONFIG, EXIT_OK};

#[derive(Debug)]
pub struct SolveRun {
    pub result: SolverResult,
    pub summary: Summary,
    pub output_dir: PathBuf,
}

/// Solve, time the solve alone, then write the three CSV files.
pub fn run_solve(cfg: &RunConfig) -> anyhow::Result<SolveRun> {
    let params = cfg.params()?;
    let settings = cfg.solver_settings()?;
    let inst = build(&cfg.problem, &params)?;

    let start = Instant::now();
    let result = solve(&inst.ocp, &inst.initial_policy, &settings)?;
    let wall = start.elapsed().as_secs_f64();

    let summary = Summary::new(&cfg.problem, &result, params.dt, wall);
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    output::write_trajectory(&dir.join(TRAJECTORY_FILE), &result.trajectory, params.dt)?;
    output::write_iterations(&dir.join(ITERATIONS_FILE), &result.reports)?;
    output::write_summary(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(SolveRun {
        result,
        summary,
        output_dir: dir,
    })
}

pub fn cmd_solve(path: &Path) -> i32 {
    let cfg = match RunConfig::load(path).and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run_solve(&cfg) {
        Ok(run) => {
            let s = &run.summary;
            println!(
                "{}: {} after {} iterations, cost {:.6e}, ISE {:.3e}, {:.3} s -> {}",
                s.problem,
                s.status,
                s.iterations,
                s.cost,
                s.ise,
                s.wall_time_s,
                run.output_dir.display()
            );
            if s.converged {
                EXIT_OK
            } else {
                EXIT_ABORTED
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ABORTED
        }
    }
}
