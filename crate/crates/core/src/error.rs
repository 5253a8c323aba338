use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box coordinates must be finite, got {0:?}")]
    NonFinite([f64; 4]),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid reward config: {0}")]
    Reward(String),
    #[error("invalid optimizer config: {0}")]
    Grpo(String),
    #[error("invalid generator config: {0}")]
    Generator(String),
    #[error("invalid training config: {0}")]
    Train(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("advantage normalization needs at least 2 samples per group, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite gradient component {index} ({value}) while updating on group {task_id}")]
    NonFiniteGradient {
        task_id: String,
        index: usize,
        value: f64,
    },
    #[error("rollout group {0} has no advantages; call normalize first")]
    MissingAdvantages(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("{}:{line}: {msg}", path.display())]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("evaluation needs at least one prediction/ground-truth pair")]
    EmptyInput,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Umbrella error for the training driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
