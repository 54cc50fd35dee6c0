use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("unknown sample id {0}")]
    UnknownSample(usize),
    #[error("sample {0} already carries a label")]
    AlreadyLabeled(usize),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}
