//! TOML run configuration. Every key except `problem` is optional.

use std::path::{Path, PathBuf};

use pilqr::systems::{lookup, CatalogEntry, ProblemParams};
use pilqr::SolverSettings;
use serde::Deserialize;

/// Overrides the configured output directory when set.
pub const OUTPUT_DIR_ENV: &str = "PILQR_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "pilqr-out";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_BENCH_HORIZON: f64 = 3.0;
pub const DEFAULT_REPETITIONS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub sigma: Option<f64>,
    pub alpha_decay: Option<f64>,
    pub max_linesearch_steps: Option<usize>,
    pub max_iterations: Option<usize>,
    pub merit_rel_tol: Option<f64>,
    pub ise_max: Option<f64>,
    pub validation_mode: Option<bool>,
    pub rank_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Sampling times to sweep; the horizon stays fixed.
    pub dt: Option<Vec<f64>>,
    pub repetitions: Option<usize>,
    pub parallel: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    /// Seconds.
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

/// Horizon in steps for `seconds / dt`, which must be a positive integer.
pub fn steps(seconds: f64, dt: f64) -> Result<usize, ConfigError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ConfigError::Invalid(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(ConfigError::Invalid(format!(
            "horizon must be positive, got {seconds}"
        )));
    }
    let n = seconds / dt;
    let rounded = n.round();
    if (n - rounded).abs() > 1e-9 * rounded.max(1.0) || rounded < 1.0 {
        return Err(ConfigError::Invalid(format!(
            "horizon {seconds} s is not a whole number of steps of {dt} s"
        )));
    }
    Ok(rounded as usize)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn entry(&self) -> Result<&'static CatalogEntry, ConfigError> {
        lookup(&self.problem).ok_or_else(|| ConfigError::UnknownProblem(self.problem.clone()))
    }

    pub fn dt(&self) -> Result<f64, ConfigError> {
        Ok(self.dt.unwrap_or(self.entry()?.default_dt))
    }

    pub fn params(&self) -> Result<ProblemParams, ConfigError> {
        let entry = self.entry()?;
        let dt = self.dt()?;
        let seconds = self.horizon.unwrap_or(entry.default_horizon_seconds);
        Ok(ProblemParams {
            horizon: steps(seconds, dt)?,
            dt,
            seed: self.seed.unwrap_or(DEFAULT_SEED),
        })
    }

    pub fn solver_settings(&self) -> Result<SolverSettings, ConfigError> {
        self.solver_settings_at(self.dt()?)
    }

    /// Explicit keys first, then the problem's merit weight at `dt`, then
    /// the library defaults.
    pub fn solver_settings_at(&self, dt: f64) -> Result<SolverSettings, ConfigError> {
        let base = self.entry()?.solver_settings(dt);
        let s = &self.solver;
        let settings = SolverSettings {
            sigma: s.sigma.or(base.sigma),
            alpha_decay: s.alpha_decay.unwrap_or(base.alpha_decay),
            max_linesearch_steps: s.max_linesearch_steps.unwrap_or(base.max_linesearch_steps),
            max_iterations: s.max_iterations.unwrap_or(base.max_iterations),
            merit_rel_tol: s.merit_rel_tol.unwrap_or(base.merit_rel_tol),
            ise_max: s.ise_max.unwrap_or(base.ise_max),
            validation_mode: s.validation_mode.unwrap_or(base.validation_mode),
            rank_tol: s.rank_tol.unwrap_or(base.rank_tol),
        };
        settings
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(settings)
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        }
    }

    pub fn bench_dts(&self) -> Result<Vec<f64>, ConfigError> {
        let dts = match &self.bench.dt {
            Some(v) => v.clone(),
            None => vec![self.dt()?],
        };
        if dts.is_empty() {
            return Err(ConfigError::Invalid("bench.dt is empty".into()));
        }
        Ok(dts)
    }

    pub fn bench_horizon(&self) -> f64 {
        self.horizon.unwrap_or(DEFAULT_BENCH_HORIZON)
    }

    pub fn repetitions(&self) -> usize {
        self.bench.repetitions.unwrap_or(DEFAULT_REPETITIONS)
    }

    /// Check everything that can be checked without solving.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params()?;
        self.solver_settings()?;
        Ok(())
    }
}
