use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("disconnected network: {0}")]
    Disconnected(String),
    #[error("measurement error: {0}")]
    Measurement(String),
    #[error("invalid conic program: {0}")]
    Program(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("certificate error: {0}")]
    Certificate(String),
    #[error("recovery error: {0}")]
    Recovery(String),
    #[error("estimator error: {0}")]
    Estimator(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
