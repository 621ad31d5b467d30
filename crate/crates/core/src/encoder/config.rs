use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the 1D ResNet backbone and projection head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_leads: usize,
    /// Output channels of each residual stage; strictly increasing.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub block_kernel: usize,
    /// Width `D` of the shared embedding space.
    pub projection_dim: usize,
    pub init_temperature: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_leads: 12,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: vec![2, 2, 2, 2],
            stem_kernel: 7,
            stem_stride: 2,
            pool_kernel: 3,
            pool_stride: 2,
            block_kernel: 3,
            projection_dim: 128,
            init_temperature: 0.07,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Same topology with 2 leads, narrow stages and a 16-wide head. Small
    /// enough for finite-difference gradient checks.
    pub fn micro() -> Self {
        Self {
            in_leads: 2,
            stage_channels: vec![4, 8, 12, 16],
            projection_dim: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.in_leads == 0 {
            return fail("in_leads must be positive");
        }
        if self.projection_dim == 0 {
            return fail("projection_dim must be positive");
        }
        if self.stage_channels.is_empty() || self.stage_channels[0] == 0 {
            return fail("stage_channels must be non-empty and positive");
        }
        if self.stage_channels.windows(2).any(|w| w[0] >= w[1]) {
            return fail("stage_channels must be strictly increasing");
        }
        if self.blocks_per_stage.len() != self.stage_channels.len() || self.blocks_per_stage.contains(&0) {
            return fail("blocks_per_stage needs one positive count per stage");
        }
        let sizes = [
            self.stem_kernel,
            self.stem_stride,
            self.pool_kernel,
            self.pool_stride,
            self.block_kernel,
        ];
        if sizes.contains(&0) {
            return fail("kernel sizes and strides must be positive");
        }
        if !(self.init_temperature > 0.0 && self.init_temperature.is_finite()) {
            return fail("init_temperature must be positive");
        }
        if !(self.bn_eps > 0.0) {
            return fail("bn_eps must be positive");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return fail("bn_momentum must be in (0, 1]");
        }
        Ok(())
    }

    /// Width of the pooled backbone output.
    pub fn raw_dim(&self) -> usize {
        *self.stage_channels.last().expect("validated config")
    }

    pub fn stage_stride(&self, stage: usize) -> usize {
        if stage == 0 {
            1
        } else {
            2
        }
    }

    /// Total downsampling factor of the backbone; shorter inputs are rejected.
    pub fn min_samples(&self) -> usize {
        let stages: usize = (0..self.stage_channels.len()).map(|s| self.stage_stride(s)).product();
        self.stem_stride * self.pool_stride * stages
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = EncoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.projection_dim, 128);
        assert_eq!(c.init_temperature, 0.07);
        assert_eq!(c.raw_dim(), 512);
        assert_eq!(c.min_samples(), 32);
        EncoderConfig::micro().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            EncoderConfig { projection_dim: 0, ..Default::default() },
            EncoderConfig { stage_channels: vec![64, 64, 128, 256], ..Default::default() },
            EncoderConfig { blocks_per_stage: vec![2, 2], ..Default::default() },
            EncoderConfig { init_temperature: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: EncoderConfig = serde_json::from_str(r#"{"in_leads": 2}"#).unwrap();
        assert_eq!(c.in_leads, 2);
        assert_eq!(c.stage_channels, vec![64, 128, 256, 512]);
        assert!(serde_json::from_str::<EncoderConfig>(r#"{"leads": 2}"#).is_err());
    }
}
