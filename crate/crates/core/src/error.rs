use thiserror::Error;

#[derive(Debug, Error)]
pub enum BimError {
    /// Shapes or dimensions that disagree with the declared layout.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Caller-supplied values that are out of domain (non-finite, empty, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed or incompatible checkpoint / data file.
    #[error("format error: {0}")]
    Format(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BimError>;

pub(crate) fn ensure_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(BimError::Contract(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(BimError::Input(format!("{what}: non-finite entry at index {i}"))),
        None => Ok(()),
    }
}
