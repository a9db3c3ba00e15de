use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the tensor engine, model assembly, and the
/// data/evaluation pipeline.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes do not admit the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A non-finite value appeared where finite input is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// An invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A tensor archive is malformed or does not match the model.
    #[error("archive error: {0}")]
    Archive(String),

    /// A manifest file is malformed or inconsistent.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Training diverged (non-finite loss).
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}
