use thiserror::Error;
use vickd_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("wav: {0}")]
    Wav(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
