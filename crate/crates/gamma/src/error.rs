use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GammaError {
    #[error(transparent)]
    Tensor(#[from] gamma_core::TensorError),
    #[error(transparent)]
    Checkpoint(#[from] gamma_core::checkpoint::CheckpointError),
    #[error("ingestion error for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("training aborted at {at}: {reason} (last good checkpoint: {last_checkpoint:?})")]
    TrainAbort { at: String, reason: String, last_checkpoint: Option<PathBuf> },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
