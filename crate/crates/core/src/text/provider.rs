use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::PromptedText;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weight of the whole-string component in stub embeddings, relative to a
/// single token.
const STUB_STRING_WEIGHT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProviderKind {
    Precomputed,
    Stub,
}

#[derive(Clone, Debug)]
enum Source {
    Table(HashMap<String, Vec<f64>>),
    Stub { seed: u64 },
}

/// Frozen text-embedding source. Immutable after construction; there is no
/// method that changes its vectors.
#[derive(Clone, Debug)]
pub struct EmbeddingProvider {
    dimension: usize,
    source: Source,
}

impl EmbeddingProvider {
    /// Deterministic hash-based encoder.
    ///
    /// A prompt's vector is the normalized sum of one pseudo-random Gaussian
    /// vector per lowercase alphanumeric token plus a smaller vector keyed by
    /// the whole string. Shared words give related prompts related vectors;
    /// the whole-string term keeps distinct strings apart. Every vector is
    /// derived from SHA-256 and ChaCha8, so output is identical across runs
    /// and platforms.
    pub fn stub(dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dimension,
            source: Source::Stub { seed },
        })
    }

    /// Table provider from `(rendered prompt, vector)` pairs.
    pub fn from_table(dimension: usize, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        let mut table = HashMap::new();
        for (key, vector) in rows {
            if vector.len() != dimension {
                return Err(Error::Format(format!(
                    "vector for {key:?} has {} values, expected {dimension}",
                    vector.len()
                )));
            }
            if table.insert(key.clone(), vector).is_some() {
                return Err(Error::DuplicatePrompt(key));
            }
        }
        Ok(Self {
            dimension,
            source: Source::Table(table),
        })
    }

    pub fn kind(&self) -> ProviderKind {
        match self.source {
            Source::Table(_) => ProviderKind::Precomputed,
            Source::Stub { .. } => ProviderKind::Stub,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of stored prompts; zero for the stub.
    pub fn len(&self) -> usize {
        match &self.source {
            Source::Table(t) => t.len(),
            Source::Stub { .. } => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embed_rendered(&self, rendered: &str) -> Result<Vec<f64>> {
        match &self.source {
            Source::Table(t) => t
                .get(rendered)
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding(rendered.to_string())),
            Source::Stub { seed } => Ok(stub_vector(*seed, self.dimension, rendered)),
        }
    }

    /// `[prompts.len(), dimension]` matrix of frozen embeddings.
    pub fn embed(&self, prompts: &[PromptedText]) -> Result<Tensor<f64>> {
        let mut data = Vec::with_capacity(prompts.len() * self.dimension);
        for p in prompts {
            data.extend(self.embed_rendered(&p.rendered)?);
        }
        Tensor::new(vec![prompts.len(), self.dimension], data)
    }

    /// SHA-256 over the bit patterns of the embeddings of `prompts`.
    pub fn fingerprint(&self, prompts: &[PromptedText]) -> Result<[u8; 32]> {
        let mut hasher = Sha256::new();
        for p in prompts {
            hasher.update(p.rendered.as_bytes());
            for v in self.embed_rendered(&p.rendered)? {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        Ok(hasher.finalize().into())
    }
}

fn gaussian_vector(seed: u64, key: &[u8], dimension: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key);
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    (0..dimension).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn stub_vector(seed: u64, dimension: usize, rendered: &str) -> Vec<f64> {
    let lower = rendered.to_lowercase();
    let mut v = vec![0.0; dimension];
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let key = [b"tok\0".as_slice(), token.as_bytes()].concat();
        for (acc, x) in v.iter_mut().zip(gaussian_vector(seed, &key, dimension)) {
            *acc += x;
        }
    }
    let key = [b"str\0".as_slice(), rendered.as_bytes()].concat();
    for (acc, x) in v.iter_mut().zip(gaussian_vector(seed, &key, dimension)) {
        *acc += STUB_STRING_WEIGHT * x;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

/// Parses the embedding file format: a `dim=<D>` header line, then one
/// `<rendered prompt>\t<D space-separated floats>` line per prompt.
pub fn parse_precomputed(text: &str) -> Result<EmbeddingProvider> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty embedding file".into()))?;
    let dimension: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::Format(format!("line 1: expected `dim=<D>`, found {header:?}")))?;
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (key, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("line {}: missing tab separator", idx + 1)))?;
        let vector = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", idx + 1)))?;
        if vector.len() != dimension {
            return Err(Error::Format(format!(
                "line {}: {} values, expected {dimension}",
                idx + 1,
                vector.len()
            )));
        }
        rows.push((key.to_string(), vector));
    }
    EmbeddingProvider::from_table(dimension, rows)
}

pub fn load_precomputed(path: &Path) -> Result<EmbeddingProvider> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
    parse_precomputed(&text)
}

/// Serializes rows in the embedding file format. Floats use shortest
/// round-trip decimals, so loading the output reproduces every bit.
pub fn format_precomputed(dimension: usize, rows: &[(String, Vec<f64>)]) -> Result<String> {
    let mut out = format!("dim={dimension}\n");
    for (key, vector) in rows {
        if key.contains(['\t', '\n', '\r']) {
            return Err(Error::Format(format!("prompt {key:?} contains a tab or newline")));
        }
        if vector.len() != dimension {
            return Err(Error::Format(format!(
                "vector for {key:?} has {} values, expected {dimension}",
                vector.len()
            )));
        }
        let values: Vec<String> = vector.iter().map(|v| v.to_string()).collect();
        out.push_str(key);
        out.push('\t');
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    Ok(out)
}
