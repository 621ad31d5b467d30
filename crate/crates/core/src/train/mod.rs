//! Contrastive pretraining loop.
//!
//! Each step embeds a batch of ECGs in train mode, scores them against the
//! frozen text embeddings of their reports, and applies one Adam update to
//! the encoder, head, and temperature. The text side never changes; its
//! fingerprint is rechecked after every epoch.

mod adam;
mod history;

pub use adam::{adam_step, AdamHyper, AdamState, ParamSlot, BETA1, BETA2, EPSILON};
pub use history::{StepRecord, TrainLog};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{batch_loss_var, similarity_matrix, similarity_matrix_var, SimilarityMatrix};
use crate::encoder::{save_checkpoint, Mode, ModelParams};
use crate::error::{Error, Result};
use crate::signal::{DatasetItem, EcgRecord};
use crate::tensor::{Tape, Tensor};
use crate::text::{embed_prompts, render_report_prompt, EmbeddingProvider, PromptedText};

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub decoupled_weight_decay: bool,
    /// Rescale gradients whose global norm exceeds this value.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            shuffle: true,
            checkpoint_every: 0,
            decoupled_weight_decay: true,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper::new(self.learning_rate, self.weight_decay, self.decoupled_weight_decay)
    }
}

/// An ECG record and its free-text report.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub record: EcgRecord,
    pub report: String,
}

impl From<DatasetItem> for TrainPair {
    fn from(item: DatasetItem) -> Self {
        Self {
            record: item.record,
            report: item.report,
        }
    }
}

/// Stacks equally-shaped records into `[N, leads, samples]`.
pub fn stack_records<'a>(records: impl IntoIterator<Item = &'a EcgRecord>) -> Result<Tensor<f64>> {
    let records: Vec<&EcgRecord> = records.into_iter().collect();
    let first = records
        .first()
        .ok_or_else(|| Error::Shape("no records to stack".into()))?;
    let shape = first.signal().shape().to_vec();
    for r in &records {
        if r.signal().shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "record {} has shape {:?}, expected {:?}",
                r.record_id(),
                r.signal().shape(),
                shape
            )));
        }
    }
    Tensor::stack(&records.iter().map(|r| r.signal().clone()).collect::<Vec<_>>())
}

fn report_prompts(pairs: &[TrainPair]) -> Result<Vec<PromptedText>> {
    pairs.iter().map(|p| render_report_prompt(&p.report)).collect()
}

/// Trains `model` on `pairs` and returns the final parameters with the step
/// log. Checkpoints go to `checkpoint_dir` as `epoch-NNNN.ckpt` when
/// `checkpoint_every` is set.
///
/// A trailing batch with fewer than two pairs is skipped with a warning.
pub fn pretrain(
    pairs: &[TrainPair],
    provider: &EmbeddingProvider,
    mut model: ModelParams<f32>,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelParams<f32>, TrainLog)> {
    config.validate()?;
    let mut log = TrainLog::new();
    if config.epochs == 0 {
        return Ok((model, log));
    }
    if pairs.len() < 2 {
        return Err(Error::DegenerateBatch { count: pairs.len() });
    }
    model.ensure_text_adapter(provider.dimension(), config.seed)?;

    let signals: Tensor<f32> = stack_records(pairs.iter().map(|p| &p.record))?.cast();
    let prompts = report_prompts(pairs)?;
    let text: Tensor<f32> = embed_prompts(provider, model.text_adapter(), &prompts)?.cast();
    let fingerprint = provider.fingerprint(&prompts)?;

    let mut state = AdamState::new(model.params().values().map(|p| p.value.len()));
    let hp = config.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                log::warn!(
                    "epoch {epoch}: dropping trailing batch of {} pair (record {})",
                    batch.len(),
                    pairs[batch[0]].record.record_id()
                );
                continue;
            }
            let record = train_step(&mut model, &mut state, &hp, config, pairs, &signals, &text, batch, epoch)?;
            log.push(record)?;
        }
        if provider.fingerprint(&prompts)? != fingerprint {
            return Err(Error::ProviderMutated);
        }
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_checkpoint(&model, &dir.join(format!("epoch-{:04}.ckpt", epoch + 1)))?;
            }
        }
        if let Some(last) = log.last() {
            log::info!("epoch {} loss {:.6} tau {:.6}", epoch + 1, last.batch_loss, last.temperature);
        }
    }
    Ok((model, log))
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut ModelParams<f32>,
    state: &mut AdamState<f32>,
    hp: &AdamHyper,
    config: &TrainConfig,
    pairs: &[TrainPair],
    signals: &Tensor<f32>,
    text: &Tensor<f32>,
    batch: &[usize],
    epoch: usize,
) -> Result<StepRecord> {
    let x = signals.select_rows(batch)?;
    let t = text.select_rows(batch)?;

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let input = tape.constant(x);
    let encoded = model.encode_on_tape(&mut tape, &bound, input, Mode::Train)?;
    let ecg = model.project_on_tape(&mut tape, &bound, encoded.raw)?;
    let text_var = tape.constant(t);
    let sim = similarity_matrix_var(&mut tape, text_var, ecg)?;
    let tau = model.temperature_on_tape(&mut tape, &bound);
    let loss = batch_loss_var(&mut tape, sim, tau)?;

    let loss_value = tape.value(loss).data()[0] as f64;
    if !loss_value.is_finite() {
        return Err(Error::NonFiniteLoss {
            batch_ids: batch.iter().map(|&i| pairs[i].record.record_id().to_string()).collect(),
        });
    }
    let mut grads = tape.backward(loss)?;
    let mut grads = bound.collect_grads(&tape, &mut grads);
    let grad_norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if let Some(clip) = config.grad_clip {
        if grad_norm > clip {
            let scale = (clip / grad_norm) as f32;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    let temperature = model.temperature() as f64;
    let mut slots: Vec<ParamSlot<'_, f32>> = model
        .params_mut()
        .map(|(name, p)| ParamSlot {
            name,
            decay: p.kind.decays(),
            value: &mut p.value,
        })
        .collect();
    adam_step(&mut slots, &grads, state, hp)?;
    model.update_running_stats(&encoded.moments)?;
    Ok(StepRecord {
        epoch,
        step: state.step(),
        batch_loss: loss_value,
        temperature,
        grad_norm,
    })
}

/// Eval-mode similarity between every pair's report and ECG, rows = texts.
pub fn pair_similarity(
    model: &ModelParams<f32>,
    pairs: &[TrainPair],
    provider: &EmbeddingProvider,
) -> Result<SimilarityMatrix<f64>> {
    let prompts = report_prompts(pairs)?;
    let text = embed_prompts(provider, model.text_adapter(), &prompts)?;
    let signals: Tensor<f32> = stack_records(pairs.iter().map(|p| &p.record))?.cast();
    let ecg: Tensor<f64> = model.embed(&signals)?.cast();
    similarity_matrix(&text, &ecg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_encoder, EncoderConfig};
    use crate::synthetic;

    fn small_run(epochs: usize, seed: u64) -> (ModelParams<f32>, TrainLog) {
        let pairs = synthetic::distinct_pairs(6, 2, 64, 3);
        let provider = EmbeddingProvider::stub(32, 1).unwrap();
        let model = build_encoder(&EncoderConfig::micro(), seed).unwrap();
        let config = TrainConfig {
            epochs,
            batch_size: 4,
            seed,
            ..TrainConfig::default()
        };
        pretrain(&pairs, &provider, model, &config, None).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let initial = build_encoder::<f32>(&EncoderConfig::micro(), 9).unwrap();
        let (model, log) = small_run(0, 9);
        assert_eq!(model, initial);
        assert!(log.is_empty());
    }

    #[test]
    fn trailing_batches() {
        // 6 pairs in batches of 4: one full batch and one of 2 per epoch
        let (model, log) = small_run(2, 1);
        assert_eq!(log.len(), 4);
        assert_eq!(log.records().iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(model.is_finite());
        assert_eq!(model.text_dim(), 32);
    }

    #[test]
    fn same_seed_same_log() {
        let (a, la) = small_run(2, 5);
        let (b, lb) = small_run(2, 5);
        assert_eq!(la.to_jsonl().unwrap(), lb.to_jsonl().unwrap());
        assert_eq!(a, b);
        let (_, lc) = small_run(2, 6);
        assert_ne!(la, lc);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { grad_clip: Some(-1.0), ..Default::default() }.validate().is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!((c.epochs, c.batch_size, c.learning_rate), (3, 32, 1e-3));
    }

    #[test]
    fn mismatched_records_rejected() {
        let mut pairs = synthetic::distinct_pairs(3, 2, 64, 0);
        pairs[2] = synthetic::distinct_pairs(1, 2, 65, 0).remove(0);
        let provider = EmbeddingProvider::stub(16, 0).unwrap();
        let model = build_encoder(&EncoderConfig::micro(), 0).unwrap();
        let config = TrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(pretrain(&pairs, &provider, model, &config, None), Err(Error::Shape(_))));
    }
}
