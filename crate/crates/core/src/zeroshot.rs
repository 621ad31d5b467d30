//! Zero-shot classification against templated class prompts.
//!
//! Each class label becomes a sentence such as "The ECG of {label}, a type
//! of diagnostic.", embedded by the frozen text provider. An ECG is assigned
//! the class whose prompt embedding is most cosine-similar to its own.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{cosine_similarity, softmax};
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::signal::DatasetItem;
use crate::tensor::Tensor;
use crate::text::{embed_prompts, render_label_prompt, EmbeddingProvider, LabelTask, PromptedText, TextAdapter};

/// Label vocabulary of a catalog. `External` covers datasets whose classes
/// were never seen in pretraining; it uses the diagnostic wording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogTask {
    Diagnostic,
    Form,
    Rhythm,
    External,
}

impl CatalogTask {
    pub fn label_task(self) -> LabelTask {
        match self {
            CatalogTask::Diagnostic | CatalogTask::External => LabelTask::Diagnostic,
            CatalogTask::Form => LabelTask::Form,
            CatalogTask::Rhythm => LabelTask::Rhythm,
        }
    }
}

/// Ordered class names; the order fixes probability indexing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCatalog")]
pub struct ClassCatalog {
    task: CatalogTask,
    labels: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    task: CatalogTask,
    labels: Vec<String>,
}

impl TryFrom<RawCatalog> for ClassCatalog {
    type Error = Error;

    fn try_from(raw: RawCatalog) -> Result<Self> {
        ClassCatalog::new(raw.task, raw.labels)
    }
}

impl ClassCatalog {
    pub fn new(task: CatalogTask, labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("catalog has no labels".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(Error::Config("catalog label is empty".into()));
            }
            if !seen.insert(l) {
                return Err(Error::Config(format!("duplicate catalog label {l:?}")));
            }
        }
        Ok(Self { task, labels })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn task(&self) -> CatalogTask {
        self.task
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn prompts(&self) -> Result<Vec<PromptedText>> {
        let task = self.task.label_task();
        self.labels.iter().map(|l| render_label_prompt(l, task)).collect()
    }
}

/// `[K, D]` matrix whose row `k` embeds the prompt of `labels[k]`.
pub fn build_class_embeddings(
    catalog: &ClassCatalog,
    provider: &EmbeddingProvider,
    adapter: Option<&TextAdapter>,
) -> Result<Tensor<f64>> {
    embed_prompts(provider, adapter, &catalog.prompts()?)
}

/// Class probabilities and the winning index.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

/// Softmax of `cos(ecg, class_k) / tau`; ties go to the lowest index.
pub fn classify(ecg: &[f64], classes: &Tensor<f64>, tau: f64) -> Result<Classification> {
    if classes.ndim() != 2 || classes.shape()[1] != ecg.len() {
        return Err(Error::dim("classify", &[ecg.len()], classes.shape()));
    }
    if classes.shape()[0] < 2 {
        return Err(Error::Config("zero-shot classification needs at least two classes".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidTemperature(tau));
    }
    let mut logits = Vec::with_capacity(classes.shape()[0]);
    for k in 0..classes.shape()[0] {
        let s = cosine_similarity(classes.row(k), ecg).map_err(|e| match e {
            Error::DegenerateEmbedding { side: "text", .. } => Error::DegenerateEmbedding { side: "class", row: k },
            other => other,
        })?;
        logits.push(s / tau);
    }
    let mut predicted = 0;
    for (k, &z) in logits.iter().enumerate() {
        if z > logits[predicted] {
            predicted = k;
        }
    }
    Ok(Classification {
        probabilities: softmax(&logits),
        predicted,
    })
}

/// Per-class counts and scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    /// True instances of this class.
    pub support: u64,
    pub predicted: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion matrix (rows true, columns predicted) and derived metrics.
/// Macro means cover only classes with non-zero support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub total: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(labels: Vec<String>, confusion: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if confusion.len() != k || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("confusion matrix must be {k}x{k}")));
        }
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let mut per_class = Vec::with_capacity(k);
        for (i, label) in labels.iter().enumerate() {
            let support: u64 = confusion[i].iter().sum();
            let predicted: u64 = confusion.iter().map(|r| r[i]).sum();
            let precision = ratio(confusion[i][i], predicted);
            let recall = ratio(confusion[i][i], support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            per_class.push(ClassMetrics {
                label: label.clone(),
                support,
                predicted,
                precision,
                recall,
                f1,
            });
        }
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64
            }
        };
        Ok(Self {
            accuracy: ratio(trace, total),
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            labels,
            confusion,
            total,
            per_class,
        })
    }

    /// Four-line plain-text summary.
    pub fn summary(&self) -> String {
        format!(
            "Accuracy  {:.4}\nPrecision {:.4}\nRecall    {:.4}\nF1        {:.4}\n",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        )
    }
}

/// Embeds each item in eval mode and scores its prediction against its
/// single label. Items are embedded one at a time, so records of different
/// lengths may be mixed.
pub fn evaluate(
    items: &[DatasetItem],
    model: &ModelParams<f32>,
    catalog: &ClassCatalog,
    provider: &EmbeddingProvider,
) -> Result<EvalReport> {
    if model.text_dim() != provider.dimension() {
        return Err(Error::Config(format!(
            "model was trained with {}-wide text embeddings, provider has {}",
            model.text_dim(),
            provider.dimension()
        )));
    }
    let mut truth = Vec::with_capacity(items.len());
    let mut unknown = BTreeSet::new();
    for (i, item) in items.iter().enumerate() {
        let [label] = item.labels.as_slice() else {
            return Err(Error::Manifest {
                line: i + 1,
                message: format!("expected exactly one label, found {}", item.labels.len()),
            });
        };
        match catalog.index_of(label) {
            Some(k) => truth.push(k),
            None => {
                unknown.insert(label.clone());
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownLabels(unknown.into_iter().collect()));
    }
    let classes = build_class_embeddings(catalog, provider, model.text_adapter())?;
    let tau = model.temperature() as f64;
    let predictions = items
        .par_iter()
        .map(|item| {
            let signal = item.record.signal();
            let batch: Tensor<f32> = signal.cast::<f32>().reshape(vec![1, signal.shape()[0], signal.shape()[1]])?;
            let e: Vec<f64> = model.embed(&batch)?.data().iter().map(|&v| v as f64).collect();
            classify(&e, &classes, tau).map(|c| c.predicted)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = catalog.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(&predictions) {
        confusion[t][p] += 1;
    }
    EvalReport::from_confusion(catalog.labels().to_vec(), confusion)
}
