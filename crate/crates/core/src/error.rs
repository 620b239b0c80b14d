use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("quadrature did not converge: estimate {estimate}, achieved error {achieved:e}, requested {requested:e}")]
    Quadrature {
        estimate: f64,
        achieved: f64,
        requested: f64,
    },

    #[error("capacity exceeded: {requested} bytes requested, budget is {budget} bytes")]
    Capacity { requested: u64, budget: u64 },

    #[error("unsupported codebook format version {0}")]
    Version(u32),

    #[error("codebook checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("truncated codebook file ({0})")]
    Truncated(&'static str),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("empty window for A: lower end {low} exceeds upper end {high}")]
    EmptyWindow { low: f64, high: f64 },

    #[error("parameters outside the valid regime: {0}")]
    Regime(String),

    #[error("no feasible point after {iterations} iterations ({failures})")]
    Infeasible {
        iterations: u64,
        failures: FailureCounts,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why individual random-search iterations were rejected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct FailureCounts {
    /// `2(1-t)^c0 - 1 <= 0`: no admissible alpha1 or L.
    pub cutoff_too_large: u64,
    /// The alpha2 search interval was empty.
    pub empty_alpha2_interval: u64,
    /// No alpha2 in the interval satisfied the completeness condition.
    pub condition_unsatisfied: u64,
}

impl FailureCounts {
    pub fn total(&self) -> u64 {
        self.cutoff_too_large + self.empty_alpha2_interval + self.condition_unsatisfied
    }

    pub(crate) fn merge(mut self, other: FailureCounts) -> FailureCounts {
        self.cutoff_too_large += other.cutoff_too_large;
        self.empty_alpha2_interval += other.empty_alpha2_interval;
        self.condition_unsatisfied += other.condition_unsatisfied;
        self
    }
}

impl fmt::Display for FailureCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cutoff too large: {}, empty alpha2 interval: {}, condition unsatisfied: {}",
            self.cutoff_too_large, self.empty_alpha2_interval, self.condition_unsatisfied
        )
    }
}

pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> Error {
    Error::Domain {
        name,
        value,
        expected,
    }
}
