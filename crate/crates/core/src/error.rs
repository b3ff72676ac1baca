use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument outside the domain of a special function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("no convergence after {iterations} iterations (last estimate {estimate})")]
    NoConvergence { iterations: usize, estimate: f64 },

    /// The reward is too small for the payoff to have two local maxima, so
    /// there is no dropout threshold.
    #[error("reward {reward} is below the critical value {bound}: no dropout threshold exists")]
    SubcriticalReward { reward: f64, bound: f64 },

    #[error("group {group}: reward {reward} is not below the critical value {bound}")]
    SubcriticalityViolated { group: String, reward: f64, bound: f64 },

    #[error("the two groups have equal posterior deviations {0}; closed-form crossings divide by zero")]
    DegenerateVariance(f64),

    #[error("groups are fully symmetric (equal cost and noise); every limiting ratio is 1")]
    AmbiguousRegime,

    #[error("expected exactly {expected} groups, found {found}")]
    GroupCount { expected: usize, found: usize },

    #[error("mixing weight {tau} for group {group} lies outside [0, 1]")]
    MixingOutOfRange { group: String, tau: f64 },

    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
