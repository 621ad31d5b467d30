use indexmap::IndexMap;

use super::params::{block_name, has_downsample, ModelParams, LOG_TEMPERATURE};
use crate::error::{Error, Result};
use crate::tensor::{BatchMoments, BnMode, Gradients, Real, Tape, Tensor, Var};

/// Batch-norm behaviour for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters recorded on a tape, keyed like [`ModelParams::params`].
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradients in parameter order; parameters the loss never reached get
    /// zeros.
    pub fn collect_grads<T: Real>(&self, tape: &Tape<T>, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.vars
            .values()
            .map(|&v| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
            })
            .collect()
    }
}

/// Raw backbone output on the tape plus the batch moments of every
/// batch-norm layer (train mode only).
pub struct Encoded<T> {
    pub raw: Var,
    pub moments: Vec<(String, BatchMoments<T>)>,
}

struct Pass<'m, 't, T: Real> {
    model: &'m ModelParams<T>,
    tape: &'t mut Tape<T>,
    bound: &'m BoundParams,
    mode: Mode,
    moments: Vec<(String, BatchMoments<T>)>,
}

impl<T: Real> Pass<'_, '_, T> {
    fn conv(&mut self, name: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
        let w = self.bound.var(&format!("{name}.weight"));
        self.tape.conv1d(x, w, stride, padding)
    }

    fn bn(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.bound.var(&format!("{name}.gamma"));
        let beta = self.bound.var(&format!("{name}.beta"));
        let mode = match self.mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval {
                mean: self.model.buffers()[&format!("{name}.running_mean")].data(),
                var: self.model.buffers()[&format!("{name}.running_var")].data(),
            },
        };
        let (y, m) = self
            .tape
            .batch_norm(x, gamma, beta, mode, self.model.config().bn_eps)?;
        if let Some(m) = m {
            self.moments.push((name.to_string(), m));
        }
        Ok(y)
    }

    fn block(&mut self, stage: usize, block: usize, x: Var) -> Result<Var> {
        let cfg = self.model.config();
        let name = block_name(stage, block);
        let stride = if block == 0 { cfg.stage_stride(stage) } else { 1 };
        let pad = cfg.block_kernel / 2;
        let downsample = has_downsample(cfg, stage, block);

        let h = self.conv(&format!("{name}.conv1"), x, stride, pad)?;
        let h = self.bn(&format!("{name}.bn1"), h)?;
        let h = self.tape.relu(h);
        let h = self.conv(&format!("{name}.conv2"), h, 1, pad)?;
        let h = self.bn(&format!("{name}.bn2"), h)?;
        let shortcut = if downsample {
            let s = self.conv(&format!("{name}.downsample.conv"), x, stride, 0)?;
            self.bn(&format!("{name}.downsample.bn"), s)?
        } else {
            x
        };
        let sum = self.tape.add(h, shortcut)?;
        Ok(self.tape.relu(sum))
    }
}

impl<T: Real> ModelParams<T> {
    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        let vars = self
            .params()
            .iter()
            .map(|(k, p)| (k.clone(), tape.param(p.value.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Backbone forward of `input: [N, leads, samples]` to `[N, raw_dim]`.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        input: Var,
        mode: Mode,
    ) -> Result<Encoded<T>> {
        let cfg = self.config();
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 3 || shape[0] == 0 || shape[1] != cfg.in_leads {
            return Err(Error::Shape(format!(
                "encoder expects [N, {}, samples], got {shape:?}",
                cfg.in_leads
            )));
        }
        if shape[2] < cfg.min_samples() {
            return Err(Error::Shape(format!(
                "{} samples is shorter than the minimum of {}",
                shape[2],
                cfg.min_samples()
            )));
        }
        let mut pass = Pass {
            model: self,
            tape,
            bound,
            mode,
            moments: Vec::new(),
        };
        let h = pass.conv("stem.conv", input, cfg.stem_stride, cfg.stem_kernel / 2)?;
        let h = pass.bn("stem.bn", h)?;
        let h = pass.tape.relu(h);
        let mut h = pass
            .tape
            .maxpool1d(h, cfg.pool_kernel, cfg.pool_stride, cfg.pool_kernel / 2)?;
        for (stage, &blocks) in cfg.blocks_per_stage.iter().enumerate() {
            for block in 0..blocks {
                h = pass.block(stage, block, h)?;
            }
        }
        let raw = pass.tape.global_avg_pool(h)?;
        Ok(Encoded {
            raw,
            moments: pass.moments,
        })
    }

    /// Affine head `raw W^T + b` into the shared space.
    pub fn project_on_tape(&self, tape: &mut Tape<T>, bound: &BoundParams, raw: Var) -> Result<Var> {
        tape.linear(raw, bound.var("head.weight"), bound.var("head.bias"))
    }

    /// `exp(log_temperature)` on the tape.
    pub fn temperature_on_tape(&self, tape: &mut Tape<T>, bound: &BoundParams) -> Var {
        tape.exp(bound.var(LOG_TEMPERATURE))
    }

    /// Raw embeddings `[N, raw_dim]`. Train mode normalizes with batch
    /// statistics but does not touch the running statistics.
    pub fn encode(&self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let input = tape.constant(batch.clone());
        let out = self.encode_on_tape(&mut tape, &bound, input, mode)?;
        Ok(tape.value(out.raw).clone())
    }

    pub fn project(&self, raw: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.param("head.weight").expect("head weight");
        if raw.ndim() != 2 || raw.shape()[1] != w.shape()[1] {
            return Err(Error::dim("project", raw.shape(), w.shape()));
        }
        let b = self.param("head.bias").expect("head bias");
        let n = raw.shape()[0];
        let data = crate::tensor::kernels::linear_forward(raw.data(), w.data(), b.data(), n, w.shape()[1]);
        Tensor::new(vec![n, w.shape()[0]], data)
    }

    /// Eval-mode encode followed by the projection head.
    pub fn embed(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.project(&self.encode(batch, Mode::Eval)?)
    }
}
