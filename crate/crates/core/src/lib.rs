//! Contrastive ECG–text pretraining with a frozen text-embedding provider,
//! followed by prompt-based zero-shot ECG classification.
//!
//! The pipeline: [`signal`] ingests waveform records and manifests,
//! [`encoder`] maps ECG batches through a 1D ResNet-18 and a projection head,
//! [`text`] supplies frozen prompt embeddings, [`contrastive`] scores the
//! pairs, [`train`] runs the optimizer loop, and [`zeroshot`] classifies
//! unseen records against templated class prompts.

pub mod cli;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod signal;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod train;
pub mod zeroshot;

pub use error::{Error, Result};
