//! The spatial-spectral transformer: windowed spatial attention, global spectral
//! attention, the layer/block hierarchy, parameter and cost accounting, checkpoints
//! and tiled inference.

mod checkpoint;
pub mod check;
mod config;
mod flops;
mod infer;
pub mod layers;
mod model;
pub mod ops;

use std::path::PathBuf;

use thiserror::Error;

use crate::hsi::HsiError;
use crate::tensor::TensorError;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{AttentionOrder, SstConfig, Stage};
pub use flops::{count_flops, count_params, FlopCount};
pub use infer::{denoise, denoise_tiled, forward_tensor, tile_starts, DEFAULT_OVERLAP, DEFAULT_TILE};
pub use layers::{
    gsa_forward, nlsa_forward, rssb_forward, ssma_forward, sst_forward, sstl_forward, AttnContext, AttnParams,
    SstParams,
};
pub use model::{is_branch_output, param_layout, Binding, Init, ParamSpec, SstModel};
pub use ops::{cyclic_shift, window_partition, window_reverse};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("malformed checkpoint at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Hsi(#[from] HsiError),
}

impl NetError {
    /// Flattens into the tensor error type for use inside tape closures.
    pub fn into_tensor(self) -> TensorError {
        match self {
            NetError::Tensor(e) => e,
            other => TensorError::Contract(other.to_string()),
        }
    }
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
