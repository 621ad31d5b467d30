//! Frozen text side: prompt templates, embedding providers, and the fixed
//! adapter used when the provider width differs from the shared dimension.

mod adapter;
mod prompt;
mod provider;

pub use adapter::TextAdapter;
pub use prompt::{render_label_prompt, render_report_prompt, LabelTask, PromptedText, TemplateKind};
pub use provider::{format_precomputed, load_precomputed, parse_precomputed, EmbeddingProvider, ProviderKind};

use crate::error::Result;
use crate::tensor::Tensor;

/// Embeds prompts and maps them through `adapter` when one is given.
pub fn embed_prompts(
    provider: &EmbeddingProvider,
    adapter: Option<&TextAdapter>,
    prompts: &[PromptedText],
) -> Result<Tensor<f64>> {
    let raw = provider.embed(prompts)?;
    match adapter {
        Some(a) => a.apply(&raw),
        None => Ok(raw),
    }
}
