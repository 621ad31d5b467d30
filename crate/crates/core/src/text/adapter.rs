use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

/// Fixed random linear map from provider width to the shared embedding
/// width. Never trained; the weights are regenerated from `seed`, so the
/// three fields fully describe it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextAdapter {
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl TextAdapter {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            output_dim,
            seed,
        }
    }

    /// `[output_dim, input_dim]` weights drawn from N(0, 1/input_dim).
    pub fn weight(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, 1.0 / (self.input_dim as f64).sqrt()).expect("finite std");
        (0..self.input_dim * self.output_dim)
            .map(|_| normal.sample(&mut rng))
            .collect()
    }

    pub fn apply(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        if x.ndim() != 2 || x.shape()[1] != self.input_dim {
            return Err(Error::dim("text adapter", x.shape(), &[self.output_dim, self.input_dim]));
        }
        let n = x.shape()[0];
        let zeros = vec![0.0; self.output_dim];
        let data = kernels::linear_forward(x.data(), &self.weight(), &zeros, n, self.input_dim);
        Tensor::new(vec![n, self.output_dim], data)
    }
}
