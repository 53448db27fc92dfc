use std::path::PathBuf;

use crate::index_set::IndexSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("insufficient sensor redundancy: N = {sensors} must exceed 2M = {}", 2 * .budget)]
    InsufficientRedundancy { sensors: usize, budget: usize },

    #[error("missing gains for index sets: {}", fmt_sets(.0))]
    MissingGains(Vec<IndexSet>),

    #[error("non-strict certificate: no exponential rate (nu = {nu})")]
    NonStrictCertificate { nu: f64 },

    #[error("P is singular or ill-conditioned (condition number {condition:e})")]
    SingularP { condition: f64 },

    #[error("infeasible-after-budget for {set}: best lambda_max = {best_lambda_max:e}")]
    Infeasible { set: IndexSet, best_lambda_max: f64 },

    #[error("synthesis infeasible for: {}", fmt_failures(.0))]
    SynthesisFailed(Vec<(IndexSet, f64)>),

    #[error("problem size {size} exceeds synthesis cap {cap}")]
    TooLarge { size: usize, cap: usize },

    #[error("numerical overflow at t = {t}")]
    Overflow { t: f64 },

    #[error("degenerate droop breakpoints for customer {customer}")]
    DegenerateDroop { customer: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid gains file {}: {reason}", .path.display())]
    GainsFile { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_sets(sets: &[IndexSet]) -> String {
    sets.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
}

fn fmt_failures(f: &[(IndexSet, f64)]) -> String {
    f.iter()
        .map(|(s, l)| format!("{s} (best lambda_max {l:e})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for synthesis failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Argument(_)
            | Error::Dimension { .. }
            | Error::InsufficientRedundancy { .. }
            | Error::MissingGains(_)
            | Error::DegenerateDroop { .. }
            | Error::GainsFile { .. } => 2,
            Error::Infeasible { .. } | Error::SynthesisFailed(_) | Error::TooLarge { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
