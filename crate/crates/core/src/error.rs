//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A 6D rotation block cannot be orthogonalized (zero or collinear columns).
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),

    /// A pose or parameter container has the wrong element count.
    #[error("layout error: {0}")]
    LayoutError(String),

    /// Array shapes are inconsistent for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid argument value.
    #[error("bad argument: {0}")]
    BadArgument(String),

    /// Timestep outside [1, T].
    #[error("bad timestep: t={t}, T={steps}")]
    BadTimestep { t: usize, steps: usize },

    /// Motion (or target length) too short for the operation.
    #[error("too short: {0}")]
    TooShort(String),

    /// Invalid dataset specification.
    #[error("bad dataset spec: {0}")]
    BadSpec(String),

    /// Corpus unsuitable for the requested operation (e.g. a single caption class).
    #[error("bad corpus: {0}")]
    BadCorpus(String),

    /// Empty corpus where at least one item is required.
    #[error("empty corpus")]
    EmptyCorpus,

    /// Too few samples for a statistical estimate.
    #[error("too few samples: {0}")]
    TooFewSamples(String),

    /// Model/checkpoint configuration incompatible with the requested operation.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    /// A forward pass produced a non-finite activation.
    #[error("non-finite activation: {0}")]
    NonFiniteActivation(String),

    /// Backpropagation produced a non-finite gradient.
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    /// Denoiser evaluation failed.
    #[error("model error: {0}")]
    ModelError(String),

    /// A numerical routine left its validity envelope.
    #[error("numerical error: {0}")]
    NumericalError(String),

    /// Malformed input file.
    #[error("parse error: {0}")]
    ParseError(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
