use thiserror::Error;

/// Which side of the relative-degree test failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeficientMatrix {
    /// `C_{n+1} B_n`, the input-to-next-constraint map.
    InputPreview,
    /// `C_{n+1}` itself.
    NextStateConstraint,
}

/// Diagnostic produced when a stage does not have relative degree one.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeDegreeViolation {
    pub step: usize,
    pub matrix: DeficientMatrix,
    pub rows: usize,
    pub rank: usize,
}

impl std::fmt::Display for RelativeDegreeViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.matrix {
            DeficientMatrix::InputPreview => "C_next * B",
            DeficientMatrix::NextStateConstraint => "C_next",
        };
        write!(
            f,
            "step {}: {} has rank {} < {} rows (relative degree is not one)",
            self.step, name, self.rank, self.rows
        )
    }
}

/// Which admissibility condition of the singular Riccati step failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularCondition {
    /// The Hessian has a significantly negative eigenvalue.
    HessianNotPsd,
    /// A kernel direction of the Hessian is not annihilated by the cross term.
    KernelNotContained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularConditionViolation {
    pub step: usize,
    pub condition: SingularCondition,
    /// Offending eigenvalue or kernel residual.
    pub value: f64,
}

impl std::fmt::Display for SingularConditionViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.condition {
            SingularCondition::HessianNotPsd => write!(
                f,
                "step {}: Hessian has eigenvalue {:e} below zero",
                self.step, self.value
            ),
            SingularCondition::KernelNotContained => write!(
                f,
                "step {}: Hessian kernel not contained in cross-term kernel (residual {:e})",
                self.step, self.value
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// The problem definition violates a structural assumption.
    #[error("invalid problem definition: {0}")]
    Definition(String),

    #[error("numerical failure at step {step}: {what}")]
    Numerical { step: usize, what: String },

    /// Rollout produced a non-finite state.
    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("{0}")]
    RelativeDegree(RelativeDegreeViolation),

    #[error("{0}")]
    Admissibility(SingularConditionViolation),

    #[error("infeasible constraint at step {step}: {what}")]
    Infeasible { step: usize, what: String },

    /// The stacked constraint matrix lost row rank after pre-screening.
    #[error("stacked constraint matrix at step {step} has rank {rank} < {rows} rows")]
    RankCollapse {
        step: usize,
        rows: usize,
        rank: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
