use std::fmt;
use std::path::PathBuf;

/// Crate-wide error type.
///
/// The CLI maps these onto its exit-code contract: input-side problems
/// (`Input`, `Format`, `Io`) exit 1, runtime/numeric problems (`Shape`,
/// `Numeric`, `Conditioning`, `Divergence`) exit 2.
#[derive(Debug)]
pub enum Error {
    /// Tensor/layer geometry mismatch.
    Shape(String),
    /// Invalid argument or configuration value.
    Input(String),
    /// Malformed external file (dataset, checkpoint, matrix file).
    Format(String),
    /// Non-finite values or other numeric failures.
    Numeric(String),
    /// Eigenvalue below the whitening floor.
    Conditioning(String),
    /// Underlying I/O failure with the path it happened on.
    Io { path: PathBuf, source: std::io::Error },
    /// Training loss went NaN/Inf or above the guard threshold.
    Divergence { epoch: usize, batch: usize, loss: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Conditioning(msg) => write!(f, "conditioning error: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
            Error::Divergence { epoch, batch, loss } => write!(
                f,
                "training diverged at epoch {epoch}, batch {batch}: loss = {loss}"
            ),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors owed to bad user input rather than a runtime failure.
    pub fn is_input_side(&self) -> bool {
        matches!(self, Error::Input(_) | Error::Format(_) | Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
