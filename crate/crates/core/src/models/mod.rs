//! The LSTM sequence VAE and its GP-prior variant: encoder/decoder,
//! objectives, training, generation and checkpointing.

pub mod checkpoint;
pub mod elbo;
pub mod generate;
pub mod params;
pub mod train;

use thiserror::Error;

use crate::gp::GpError;
use crate::tensor::NumericError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("model has not been trained")]
    NotTrained,
}

pub use elbo::{decode, elbo_graph, encode, reparameterize, KernelInputLayout, Prior, SeqBatch};
pub use generate::{generate_missing, GeneratedSeq};
pub use params::{DecoderParams, ElboConfig, EncoderParams, LvaeParams, VaeParams, VaeVars};
pub use train::{train_generative, EpochStats, GenParams, TrainedGen};
