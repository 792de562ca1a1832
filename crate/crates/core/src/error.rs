//! Error type shared by the library.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// A transaction named a table or key outside the configured schema.
    #[error("missing item: {0}")]
    MissingItem(String),
    /// A transaction could not be evaluated (unbound parameter, type error).
    #[error("execution error: {0}")]
    Execution(String),
    /// An invariant references a table or field absent from the schema.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    /// A history generator could not find any valid continuation.
    #[error("generation exhausted: {0}")]
    GenerationExhausted(String),
    /// Replaying a history reached an invalid intermediate state.
    #[error("replay produced an invalid state: {0}")]
    ReplayInvalid(String),
    /// A simulation configuration is unusable.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    /// The commit-latency model was given no samples.
    #[error("no latency samples")]
    EmptySamples,
    /// A workload spec failed to load; one message per problem.
    #[error("invalid workload spec:\n  {}", .0.join("\n  "))]
    Spec(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;
