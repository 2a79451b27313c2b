use thiserror::Error;

/// Assumption whose numerical check failed while building a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Nominal Lyapunov decrease (`a3 > 0`).
    LyapunovDecrease,
    /// Second-order growth of the value function in the input error.
    SecondOrderGrowth,
    /// Q-linear contraction of the optimizer (`kappa_hat < 1`).
    Contraction,
    /// Region radii and level sets.
    Region,
    /// Existence of a stable sampling time for the auxiliary system.
    StableSamplingTime,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Assumption::LyapunovDecrease => "Lyapunov decrease",
            Assumption::SecondOrderGrowth => "second-order growth",
            Assumption::Contraction => "optimizer contraction",
            Assumption::Region => "region radii",
            Assumption::StableSamplingTime => "stable sampling time",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("KKT matrix is singular at the current iterate (regularity violated)")]
    RegularityViolation,

    #[error("certification failed ({assumption}): {detail}")]
    Certification {
        assumption: Assumption,
        detail: String,
    },

    #[error("state became non-finite at integration step {step}")]
    BlowUp { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("invalid input: {0}")]
    Input(String),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn cert(assumption: Assumption, detail: impl Into<String>) -> Self {
        Error::Certification {
            assumption,
            detail: detail.into(),
        }
    }

    /// True for failures of the stability chain itself (as opposed to bad input).
    pub fn is_certification_failure(&self) -> bool {
        matches!(self, Error::Certification { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
