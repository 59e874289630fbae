use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape { what: String, expected: String, found: String },
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    EpisodeDone,
    #[error("could not place {what} after {attempts} attempts")]
    Layout { what: &'static str, attempts: usize },
    #[error("invalid world configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay memory holds {available} transitions, {requested} requested")]
    Insufficient { available: usize, requested: usize },
    #[error("empty sample requested")]
    EmptyBatch,
}

#[derive(Debug, Error)]
pub enum ScalarizeError {
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("priority {index} is {value}; priorities must be finite and non-negative")]
    NegativePriority { index: usize, value: f64 },
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Scalarize(#[from] ScalarizeError),
    #[error("ensemble is empty")]
    EmptyEnsemble,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("checkpoint {path} does not match the network: {msg}")]
    ShapeMismatch { path: PathBuf, msg: String },
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss for objective `{objective}` at update {update}: {detail}")]
    NonFinite { objective: String, update: u64, detail: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Scalarize(#[from] ScalarizeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation configuration error: {0}")]
    Config(String),
    #[error("no baseline row with priorities (1, 1, 1)")]
    MissingBaseline,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Scalarize(#[from] ScalarizeError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("invalid session setup: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
