//! Error type shared across the engine.

use thiserror::Error;

use crate::kernel::Measure;
use crate::sfunc::Kind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("arity mismatch for {kind:?}: expected {expected} parent values, got {got}")]
    ArityMismatch {
        kind: Kind,
        expected: usize,
        got: usize,
    },

    #[error("operation `{operation}` is not supported for SFunc kind {kind:?}")]
    UnsupportedOperation { operation: String, kind: Kind },

    #[error("no performance record for measure {measure:?} on implementation `{impl_name}`")]
    UnknownPerfMeasure { impl_name: String, measure: Measure },

    #[error("operation `{0}` is not registered")]
    UnknownOperation(String),

    #[error("operation `{0}` is already registered")]
    DuplicateOperation(String),

    #[error("implementation name `{0}` is already registered")]
    DuplicateImplName(String),

    #[error("registry is frozen; no further registrations are accepted")]
    RegistryFrozen,

    #[error("registry must be frozen before algorithms may run")]
    RegistryNotFrozen,

    #[error("policy `{policy}` selected `{selected}`, which is not a candidate for `{operation}`")]
    PolicyOutsideCandidates {
        policy: String,
        selected: String,
        operation: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("a parent message assigns zero total mass over its range")]
    DegenerateInput,

    #[error("linear form is singular; exact inversion failed")]
    SingularMatrix,

    #[error("scoring failed for value {value}: {message}")]
    ScoreEval { value: String, message: String },

    #[error("invalid network: {}", .0.join("; "))]
    InvalidNetwork(Vec<String>),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("missing value for placeholder `{0}`")]
    MissingPlaceholder(String),

    #[error("evidence error: {0}")]
    Evidence(String),

    #[error("variable ranges must be finite here; discretize via the support operation first")]
    InfiniteRange,

    #[error("factor range mismatch on variable `{0}`")]
    RangeMismatch(String),

    #[error("total particle weight is zero")]
    ZeroWeight,

    #[error("dataset is empty")]
    EmptyDataset,

    /// Internal signal: the selected implementation declined this call and the
    /// driver should fall back to the next candidate.
    #[error("implementation not applicable to these arguments")]
    NotApplicable,
}
