use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("line {line}: {message}")]
    Def { line: usize, message: String },

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("feature cache: {0}")]
    Cache(String),

    #[error("non-finite feature {name} (index {index}) for sink fragment {sink_fragment}")]
    NonFiniteFeature {
        sink_fragment: u32,
        index: usize,
        name: String,
    },

    #[error("shape mismatch at {layer}: expected {expected}, got {actual}")]
    Shape {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// Errors caused by bad user input as opposed to a broken internal invariant.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_) | Error::Shape { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
