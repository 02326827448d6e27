//! Error taxonomy shared by every module of the crate.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A structural or numerical precondition on user input was violated.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Pivoted Cholesky hit a pivot more negative than the PSD tolerance.
    #[error("matrix is not positive semidefinite: pivot {pivot:.3e} at index {index} (tolerance {tolerance:.3e})")]
    NotPositiveSemiDefinite {
        pivot: f64,
        index: usize,
        tolerance: f64,
    },

    /// The requested dumping factor breaks the uniform ellipticity bound.
    #[error("ellipticity violated: s = {s:.6e} exceeds the admissible maximum {s_max:.6e} (worst perturbation sum {worst_sum:.6e}, delta*g0 = {bound:.6e})")]
    EllipticityViolated {
        s: f64,
        s_max: f64,
        worst_sum: f64,
        bound: f64,
    },

    /// ILU(0) encountered a vanishing pivot.
    #[error("ILU(0) breakdown: zero pivot in row {row}")]
    IluBreakdown { row: usize },

    /// GMRES made no progress over a full restart cycle.
    #[error("GMRES stagnated at relative residual {relative_residual:.3e} after {iterations} iterations; consider the sequential block forward-substitution fallback")]
    GmresStagnation {
        relative_residual: f64,
        iterations: usize,
    },

    /// GMRES ran out of its iteration budget.
    #[error("GMRES did not reach tolerance {tolerance:.3e}: relative residual {relative_residual:.3e} after {iterations} iterations")]
    GmresDidNotConverge {
        relative_residual: f64,
        tolerance: f64,
        iterations: usize,
    },

    /// Newton failed to converge (iteration budget or failed line search).
    #[error(
        "Newton did not converge: {detail} (residual {residual:.3e} after {iterations} iterations)"
    )]
    NewtonDidNotConverge {
        detail: String,
        residual: f64,
        iterations: usize,
    },

    /// A sample solve inside an estimator failed; carries its provenance.
    #[error("sample solve failed at level {level}, sample {index}: {source}")]
    SampleFailed {
        level: usize,
        index: u64,
        #[source]
        source: Box<Error>,
    },

    /// The scheduler aborted a plan after one or more task failures.
    #[error("execution aborted after {} task failure(s); first: {}", .failures.len(), .failures.first().map(|e| e.to_string()).unwrap_or_default())]
    ExecutionAborted { failures: Vec<Error> },

    /// Writing an artifact failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the (level, sample index) provenance required by
    /// the estimator contracts. Idempotent: an error that already carries
    /// sample provenance keeps its original (more precise) attribution.
    pub fn for_sample(self, level: usize, index: u64) -> Error {
        match self {
            wrapped @ Error::SampleFailed { .. } => wrapped,
            other => Error::SampleFailed {
                level,
                index,
                source: Box::new(other),
            },
        }
    }
}
