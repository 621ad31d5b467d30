use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::tensor::{BatchMoments, Real, Tensor};
use crate::text::TextAdapter;

pub const LOG_TEMPERATURE: &str = "log_temperature";

/// Role of a trainable tensor; decides init and weight-decay treatment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    ConvWeight,
    BnScale,
    BnShift,
    LinearWeight,
    LinearBias,
    LogTemperature,
}

impl ParamKind {
    /// BN affine parameters and the temperature are exempt from decay.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::LinearWeight | ParamKind::LinearBias)
    }
}

/// Trainable tensor with its role.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

pub(crate) struct Layout {
    pub params: Vec<(String, ParamKind, Vec<usize>)>,
    /// Batch-norm layer names; each owns `running_mean` and `running_var`.
    pub norms: Vec<(String, usize)>,
}

impl Layout {
    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize) {
        self.params
            .push((format!("{name}.weight"), ParamKind::ConvWeight, vec![out, inp, k]));
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.params.push((format!("{name}.gamma"), ParamKind::BnScale, vec![c]));
        self.params.push((format!("{name}.beta"), ParamKind::BnShift, vec![c]));
        self.norms.push((name.to_string(), c));
    }
}

pub(crate) fn block_name(stage: usize, block: usize) -> String {
    format!("stage{stage}.block{block}")
}

/// Whether a block needs a 1x1 projection on its shortcut.
pub(crate) fn has_downsample(config: &EncoderConfig, stage: usize, block: usize) -> bool {
    if block != 0 {
        return false;
    }
    let in_ch = if stage == 0 {
        config.stage_channels[0]
    } else {
        config.stage_channels[stage - 1]
    };
    config.stage_stride(stage) != 1 || in_ch != config.stage_channels[stage]
}

pub(crate) fn layout(config: &EncoderConfig) -> Layout {
    let mut l = Layout {
        params: Vec::new(),
        norms: Vec::new(),
    };
    let c0 = config.stage_channels[0];
    l.conv("stem.conv", c0, config.in_leads, config.stem_kernel);
    l.bn("stem.bn", c0);
    let mut in_ch = c0;
    for (s, (&ch, &blocks)) in config.stage_channels.iter().zip(&config.blocks_per_stage).enumerate() {
        for b in 0..blocks {
            let name = block_name(s, b);
            let block_in = if b == 0 { in_ch } else { ch };
            l.conv(&format!("{name}.conv1"), ch, block_in, config.block_kernel);
            l.bn(&format!("{name}.bn1"), ch);
            l.conv(&format!("{name}.conv2"), ch, ch, config.block_kernel);
            l.bn(&format!("{name}.bn2"), ch);
            if has_downsample(config, s, b) {
                l.conv(&format!("{name}.downsample.conv"), ch, block_in, 1);
                l.bn(&format!("{name}.downsample.bn"), ch);
            }
        }
        in_ch = ch;
    }
    let d = config.projection_dim;
    l.params
        .push(("head.weight".into(), ParamKind::LinearWeight, vec![d, config.raw_dim()]));
    l.params.push(("head.bias".into(), ParamKind::LinearBias, vec![d]));
    l.params.push((LOG_TEMPERATURE.into(), ParamKind::LogTemperature, vec![]));
    l
}

/// All encoder state: trainable tensors in a fixed order, batch-norm running
/// statistics, and the frozen text adapter if one is in use.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: EncoderConfig,
    params: IndexMap<String, Param<T>>,
    buffers: IndexMap<String, Tensor<T>>,
    text_adapter: Option<TextAdapter>,
}

/// Fresh encoder with He fan-in weights, unit BN scale, zero shifts and
/// biases, and `log_temperature = ln(init_temperature)`.
pub fn build_encoder<T: Real>(config: &EncoderConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = layout(config);
    let mut params = IndexMap::new();
    for (name, kind, shape) in layout.params {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match kind {
            ParamKind::ConvWeight | ParamKind::LinearWeight => {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
            ParamKind::BnScale => vec![1.0; n],
            ParamKind::BnShift | ParamKind::LinearBias => vec![0.0; n],
            ParamKind::LogTemperature => vec![config.init_temperature.ln()],
        };
        let value = Tensor::from_f64_slice(shape, &data)?;
        params.insert(name, Param { kind, value });
    }
    let mut buffers = IndexMap::new();
    for (name, c) in layout.norms {
        buffers.insert(format!("{name}.running_mean"), Tensor::zeros(vec![c]));
        buffers.insert(format!("{name}.running_var"), Tensor::ones(vec![c]));
    }
    Ok(ModelParams {
        config: config.clone(),
        params,
        buffers,
        text_adapter: None,
    })
}

impl<T: Real> ModelParams<T> {
    pub(crate) fn from_parts(
        config: EncoderConfig,
        params: IndexMap<String, Param<T>>,
        buffers: IndexMap<String, Tensor<T>>,
        text_adapter: Option<TextAdapter>,
    ) -> Self {
        Self {
            config,
            params,
            buffers,
            text_adapter,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &IndexMap<String, Param<T>> {
        &self.params
    }

    pub fn buffers(&self) -> &IndexMap<String, Tensor<T>> {
        &self.buffers
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    /// Parameters in layout order, mutable, for the optimizer.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn temperature(&self) -> T {
        self.params[LOG_TEMPERATURE].value.data()[0].exp()
    }

    pub fn text_adapter(&self) -> Option<&TextAdapter> {
        self.text_adapter.as_ref()
    }

    /// Installs the frozen adapter needed for a provider of width
    /// `provider_dim`, or checks the one already present.
    pub fn ensure_text_adapter(&mut self, provider_dim: usize, seed: u64) -> Result<()> {
        let d = self.config.projection_dim;
        match &self.text_adapter {
            None if provider_dim == d => Ok(()),
            None => {
                self.text_adapter = Some(TextAdapter::new(provider_dim, d, seed));
                Ok(())
            }
            Some(a) if a.input_dim == provider_dim && a.output_dim == d => Ok(()),
            Some(a) => Err(Error::Config(format!(
                "model expects {}-wide text embeddings, provider has {provider_dim}",
                a.input_dim
            ))),
        }
    }

    /// Text embedding width the model was trained against.
    pub fn text_dim(&self) -> usize {
        self.text_adapter
            .map(|a| a.input_dim)
            .unwrap_or(self.config.projection_dim)
    }

    /// Blends training-batch moments into the running statistics:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(&mut self, moments: &[(String, BatchMoments<T>)]) -> Result<()> {
        let m = T::from_f64(self.config.bn_momentum);
        let keep = T::one() - m;
        for (name, batch) in moments {
            for (suffix, values) in [("running_mean", &batch.mean), ("running_var", &batch.var)] {
                let key = format!("{name}.{suffix}");
                let buf = self
                    .buffers
                    .get_mut(&key)
                    .ok_or_else(|| Error::Shape(format!("no buffer `{key}`")))?;
                if buf.len() != values.len() {
                    return Err(Error::dim("running stats", buf.shape(), &[values.len()]));
                }
                for (r, &b) in buf.data_mut().iter_mut().zip(values) {
                    *r = keep * *r + m * b;
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            kind: p.kind,
                            value: p.value.cast(),
                        },
                    )
                })
                .collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            text_adapter: self.text_adapter,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite()) && self.buffers.values().all(|b| b.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_and_decay() {
        let m = build_encoder::<f64>(&EncoderConfig::micro(), 0).unwrap();
        assert_eq!(m.params()["stem.bn.gamma"].kind, ParamKind::BnScale);
        assert!(m.params()["head.bias"].kind.decays());
        assert!(!m.params()[LOG_TEMPERATURE].kind.decays());
        assert!(m.params().contains_key("stage1.block0.downsample.conv.weight"));
        assert!(!m.params().contains_key("stage0.block0.downsample.conv.weight"));
        assert!(!m.params().contains_key("stage1.block1.downsample.conv.weight"));
        assert_eq!(m.buffer("stem.bn.running_var").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn temperature_starts_at_init() {
        let m = build_encoder::<f64>(&EncoderConfig::default(), 3).unwrap();
        assert!((m.temperature() - 0.07).abs() < 1e-15);
        let m32 = build_encoder::<f32>(&EncoderConfig::micro(), 3).unwrap();
        assert!((m32.temperature() - 0.07).abs() < 1e-7);
    }

    #[test]
    fn running_stats_blend() {
        let mut m = build_encoder::<f64>(&EncoderConfig::micro(), 0).unwrap();
        let moments = BatchMoments {
            mean: vec![1.0; 4],
            var: vec![3.0; 4],
        };
        m.update_running_stats(&[("stem.bn".into(), moments)]).unwrap();
        assert!(m.buffer("stem.bn.running_mean").unwrap().data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
        assert!(m.buffer("stem.bn.running_var").unwrap().data().iter().all(|&v| (v - 1.2).abs() < 1e-15));
    }

    #[test]
    fn adapter_installation() {
        let mut m = build_encoder::<f32>(&EncoderConfig::micro(), 0).unwrap();
        m.ensure_text_adapter(16, 1).unwrap();
        assert!(m.text_adapter().is_none());
        m.ensure_text_adapter(32, 1).unwrap();
        assert_eq!(m.text_dim(), 32);
        assert!(m.ensure_text_adapter(24, 1).is_err());
    }
}
