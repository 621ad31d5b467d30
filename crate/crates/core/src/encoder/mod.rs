//! 1D ResNet ECG encoder and linear projection head.
//!
//! A stem (strided conv, batch norm, relu, max pool) feeds residual stages of
//! basic blocks; global average pooling over time yields a raw embedding of
//! width `stage_channels.last()`, and an affine head maps it to the shared
//! dimension `D`. The contrastive temperature lives here too, stored as its
//! logarithm so it stays positive under any update.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use config::EncoderConfig;
pub use network::{BoundParams, Encoded, Mode};
pub use params::{build_encoder, ModelParams, Param, ParamKind, LOG_TEMPERATURE};
