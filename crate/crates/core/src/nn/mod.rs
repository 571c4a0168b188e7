//! Dense reverse-mode differentiation and the toy Conformer built on it.

mod checkpoint;
mod conformer;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use conformer::{
    param_count, subsampled_len, ConformerConfig, ConformerModel, ForwardPass, ParamStore, MIN_FRAMES,
};
pub use tape::{ConvGeom, Tape, Var};
pub use tensor::{matmul, Mat};

use thiserror::Error;

use crate::tensorio::TensorIoError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error in {module}: {msg}")]
    Shape { module: String, msg: String },
    #[error("{0}")]
    State(String),
    #[error("input has {frames} frames, at least {min} required")]
    Length { frames: usize, min: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
    #[error("checkpoint header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
