//! `pilqr bench <config>`: solve time against horizon length at a fixed
//! horizon in seconds, varying `dt`.

use std::path::Path;
use std::time::Instant;

use pilqr::systems::{build, ProblemParams};
use pilqr::{solve, SolverSettings};
use rayon::prelude::*;
use statrs::statistics::Statistics;

use crate::config::{steps, RunConfig};
use crate::{EXIT_ABORTED, EXIT_CONFIG, EXIT_OK};

pub const BENCH_FILE: &str = "bench.csv";
/// Below this many repetitions the spread estimate is meaningless.
pub const MIN_REPETITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub horizon: usize,
    pub dt: f64,
    pub mean_s: f64,
    pub std_s: f64,
    pub iterations: usize,
}

/// Least-squares line `t = intercept + slope N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub problem: String,
    pub rows: Vec<BenchRow>,
    /// `None` with fewer than two distinct horizons.
    pub fit: Option<LinearFit>,
}

impl BenchReport {
    /// Mean time of each row over the previous one.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[1].mean_s / w[0].mean_s)
            .collect()
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let (mx, my) = (x.mean(), y.mean());
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Some(LinearFit {
        intercept,
        slope,
        r_squared,
    })
}

fn time_one(
    problem: &str,
    params: &ProblemParams,
    settings: &SolverSettings,
) -> anyhow::Result<(f64, usize)> {
    let inst = build(problem, params)?;
    let start = Instant::now();
    let result = solve(&inst.ocp, &inst.initial_policy, settings)?;
    let elapsed = start.elapsed().as_secs_f64();
    if !result.converged() {
        log::warn!(
            "{problem} N={} did not converge ({:?})",
            params.horizon,
            result.status
        );
    }
    Ok((elapsed, result.iterations))
}

/// One warm-up solve per horizon, then `repetitions` timed solves.
pub fn run_bench(
    cfg: &RunConfig,
    repetitions: usize,
    parallel: bool,
) -> anyhow::Result<BenchReport> {
    let seconds = cfg.bench_horizon();
    let seed = cfg.params()?.seed;
    if repetitions < MIN_REPETITIONS {
        log::warn!("only {repetitions} repetitions; timings will be noisy");
    }
    let repetitions = repetitions.max(1);

    let mut rows = Vec::new();
    for dt in cfg.bench_dts()? {
        let params = ProblemParams {
            horizon: steps(seconds, dt)?,
            dt,
            seed,
        };
        let settings = cfg.solver_settings_at(dt)?;
        let (_, iterations) = time_one(&cfg.problem, &params, &settings)?;
        let times: Vec<f64> = if parallel {
            (0..repetitions)
                .into_par_iter()
                .map(|_| time_one(&cfg.problem, &params, &settings).map(|t| t.0))
                .collect::<anyhow::Result<_>>()?
        } else {
            (0..repetitions)
                .map(|_| time_one(&cfg.problem, &params, &settings).map(|t| t.0))
                .collect::<anyhow::Result<_>>()?
        };
        let std_s = if times.len() > 1 {
            (&times).std_dev()
        } else {
            0.0
        };
        rows.push(BenchRow {
            horizon: params.horizon,
            dt,
            mean_s: (&times).mean(),
            std_s,
            iterations,
        });
    }
    rows.sort_by_key(|r| r.horizon);

    let xs: Vec<f64> = rows.iter().map(|r| r.horizon as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_s).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(BenchReport {
        problem: cfg.problem.clone(),
        rows,
        fit,
    })
}

pub fn write_bench(path: &Path, report: &BenchReport) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["N", "mean_s", "std_s"])?;
    for r in &report.rows {
        w.write_record([
            r.horizon.to_string(),
            format!("{}", r.mean_s),
            format!("{}", r.std_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_bench(path: &Path, repetitions: Option<usize>, parallel: bool) -> i32 {
    let cfg = match RunConfig::load(path).and_then(|c| c.validate().and(c.bench_dts()).map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let reps = repetitions.unwrap_or_else(|| cfg.repetitions());
    if reps < MIN_REPETITIONS {
        eprintln!("warning: {reps} repetitions is below {MIN_REPETITIONS}; proceeding");
    }
    let parallel = parallel || cfg.bench.parallel.unwrap_or(false);
    let report = match run_bench(&cfg, reps, parallel) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_ABORTED;
        }
    };
    println!(
        "{:>7} {:>10} {:>12} {:>12} {:>5}",
        "N", "dt", "mean [s]", "std [s]", "iter"
    );
    for r in &report.rows {
        println!(
            "{:>7} {:>10} {:>12.6} {:>12.6} {:>5}",
            r.horizon, r.dt, r.mean_s, r.std_s, r.iterations
        );
    }
    match report.fit {
        Some(f) => println!(
            "linear fit: t = {:.3e} + {:.3e} N, R^2 = {:.4}",
            f.intercept, f.slope, f.r_squared
        ),
        None => println!("single horizon: linear fit skipped"),
    }
    let dir = cfg.output_dir();
    let written = std::fs::create_dir_all(&dir)
        .map_err(anyhow::Error::from)
        .and_then(|_| write_bench(&dir.join(BENCH_FILE), &report));
    if let Err(e) = written {
        eprintln!("error: {e:#}");
        return EXIT_ABORTED;
    }
    EXIT_OK
}
