//! Dense linear algebra and a hand-differentiated MLP used for each projection head.
//!
//! A head is a stack of `L` linear layers. Every layer except the last is
//! followed by batch normalization and a GELU activation; the last layer is a
//! plain affine map. All arithmetic is `f64`.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use matrix::RealMatrix;
pub use mlp::{
    gelu, gelu_derivative, BatchNorm, ForwardCache, Gradients, Layer, LayerGrad, MlpConfig,
    MlpParams, Mode, BN_EPS, BN_MOMENTUM,
};

pub(crate) use matrix::{dot, norm};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("batch of {0} rows cannot be normalized in train mode (need at least 2)")]
    BatchSize(usize),
    #[error("forward cache does not match these parameters: {0}")]
    Cache(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
