//! Cosine similarity and the symmetric temperature-scaled contrastive loss.
//!
//! For a batch of `N` text embeddings `t_i` and ECG embeddings `e_j`, the
//! similarity matrix holds `S[i][j] = cos(t_i, e_j)`. With logits
//! `Z = S / τ`:
//!
//! ```text
//! ℓ_i(e→t) = logsumexp_j Z[i][j] − Z[i][i]        (row-wise)
//! ℓ_i(t→e) = logsumexp_j Z[j][i] − Z[i][i]        (column-wise)
//! L        = 1/N Σ_i (ℓ_i(e→t) + ℓ_i(t→e)) / 2
//! ```
//!
//! Denominators include the positive pair. Duplicate texts in a batch are
//! still treated as negatives.

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Real, Tape, Tensor, Var};

const MIN_NORM: f64 = 1e-12;

/// `N_t × N_e` matrix of cosine similarities, entry `(i, j) = cos(t_i, e_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<T> {
    values: Tensor<T>,
}

impl<T: Real> SimilarityMatrix<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.ndim() != 2 {
            return Err(Error::Shape(format!(
                "similarity matrix must be 2-D, got {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(Tensor::from_f64_slice(vec![n, m], &data)?)
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values.data()[i * self.cols() + j]
    }

    pub fn transpose(&self) -> Self {
        let (n, m) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(n * m);
        for j in 0..m {
            for i in 0..n {
                data.push(self.get(i, j));
            }
        }
        Self {
            values: Tensor::new(vec![m, n], data).expect("transpose keeps size"),
        }
    }

    /// Number of ECG columns whose most similar text row is their own pair.
    /// Ties go to the lowest row index.
    pub fn retrieval_hits(&self) -> usize {
        (0..self.cols().min(self.rows()))
            .filter(|&j| {
                let best = (0..self.rows())
                    .fold(0, |b, i| if self.get(i, j) > self.get(b, j) { i } else { b });
                best == j
            })
            .count()
    }

    fn square_size(&self) -> Result<usize> {
        if self.rows() != self.cols() || self.rows() == 0 {
            return Err(Error::Shape(format!(
                "contrastive loss needs a non-empty square matrix, got {:?}",
                self.values.shape()
            )));
        }
        Ok(self.rows())
    }
}

/// `t·e / (‖t‖‖e‖)` clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Real>(t: &[T], e: &[T]) -> Result<T> {
    if t.len() != e.len() {
        return Err(Error::dim("cosine_similarity", &[t.len()], &[e.len()]));
    }
    let nt = norm(t);
    let ne = norm(e);
    if nt.as_f64() <= MIN_NORM {
        return Err(Error::DegenerateEmbedding { side: "text", row: 0 });
    }
    if ne.as_f64() <= MIN_NORM {
        return Err(Error::DegenerateEmbedding { side: "ecg", row: 0 });
    }
    let dot = t.iter().zip(e).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    Ok(clamp_unit(dot / (nt * ne)))
}

/// Entry `(i, j) = cosine_similarity(text[i], ecg[j])`.
pub fn similarity_matrix<T: Real>(text: &Tensor<T>, ecg: &Tensor<T>) -> Result<SimilarityMatrix<T>> {
    let geometry = UnitRows::pair(text, ecg)?;
    SimilarityMatrix::new(geometry.similarities())
}

/// Per-pair ECG-to-text loss: row-wise softmax cross-entropy against the
/// diagonal.
pub fn loss_e_to_t<T: Real>(sim: &SimilarityMatrix<T>, tau: T) -> Result<Vec<T>> {
    let n = sim.square_size()?;
    check_tau(tau)?;
    Ok((0..n)
        .map(|i| {
            let row = &sim.values.data()[i * n..(i + 1) * n];
            let logits: Vec<T> = row.iter().map(|&s| s / tau).collect();
            log_sum_exp(&logits) - logits[i]
        })
        .collect())
}

/// Per-pair text-to-ECG loss; identical to `loss_e_to_t` of the transpose.
pub fn loss_t_to_e<T: Real>(sim: &SimilarityMatrix<T>, tau: T) -> Result<Vec<T>> {
    loss_e_to_t(&sim.transpose(), tau)
}

/// Mean over pairs of the two directional losses.
pub fn batch_loss<T: Real>(sim: &SimilarityMatrix<T>, tau: T) -> Result<T> {
    let e2t = loss_e_to_t(sim, tau)?;
    let t2e = loss_t_to_e(sim, tau)?;
    let n = T::from_usize(e2t.len());
    let two = T::from_f64(2.0);
    let total = e2t
        .iter()
        .zip(&t2e)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a + b) / two);
    Ok(total / n)
}

/// Records the similarity matrix of `text: [N_t, D]` and `ecg: [N_e, D]` on
/// the tape.
pub fn similarity_matrix_var<T: Real>(tape: &mut Tape<T>, text: Var, ecg: Var) -> Result<Var> {
    let geometry = UnitRows::pair(tape.value(text), tape.value(ecg))?;
    let out = geometry.similarities();
    Ok(tape.custom(&[text, ecg], out, Box::new(geometry)))
}

/// Records the batch loss of a square similarity matrix and a scalar
/// temperature on the tape.
pub fn batch_loss_var<T: Real>(tape: &mut Tape<T>, sim: Var, tau: Var) -> Result<Var> {
    let s = SimilarityMatrix::new(tape.value(sim).clone())?;
    let tau_value = tape
        .value(tau)
        .item()
        .ok_or_else(|| Error::Shape(format!("temperature must be scalar, got {:?}", tape.value(tau).shape())))?;
    let loss = batch_loss(&s, tau_value)?;
    let n = s.rows();
    let logits: Vec<T> = s.values.data().iter().map(|&v| v / tau_value).collect();
    let mut row_probs = vec![T::zero(); n * n];
    let mut col_probs = vec![T::zero(); n * n];
    for i in 0..n {
        let p = softmax(&logits[i * n..(i + 1) * n]);
        row_probs[i * n..(i + 1) * n].copy_from_slice(&p);
    }
    for j in 0..n {
        let column: Vec<T> = (0..n).map(|i| logits[i * n + j]).collect();
        for (i, p) in softmax(&column).into_iter().enumerate() {
            col_probs[i * n + j] = p;
        }
    }
    let op = ContrastiveLossBackward { n, row_probs, col_probs };
    Ok(tape.custom(&[sim, tau], Tensor::scalar(loss), Box::new(op)))
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

fn clamp_unit<T: Real>(v: T) -> T {
    v.max(-T::one()).min(T::one())
}

fn check_tau<T: Real>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau.as_f64()));
    }
    Ok(())
}

fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = logits.iter().map(|&z| (z - max).exp()).sum();
    max + s.ln()
}

pub(crate) fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let s: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Unit-normalized rows of both sides, kept for the backward pass.
struct UnitRows<T> {
    left_unit: Vec<T>,
    left_norm: Vec<T>,
    right_unit: Vec<T>,
    right_norm: Vec<T>,
    rows: usize,
    cols: usize,
    dim: usize,
}

impl<T: Real> UnitRows<T> {
    fn pair(text: &Tensor<T>, ecg: &Tensor<T>) -> Result<Self> {
        if text.ndim() != 2 || ecg.ndim() != 2 || text.shape()[1] != ecg.shape()[1] {
            return Err(Error::dim("similarity_matrix", text.shape(), ecg.shape()));
        }
        let dim = text.shape()[1];
        let (left_unit, left_norm) = normalize_rows(text, "text")?;
        let (right_unit, right_norm) = normalize_rows(ecg, "ecg")?;
        Ok(Self {
            left_unit,
            left_norm,
            right_unit,
            right_norm,
            rows: text.shape()[0],
            cols: ecg.shape()[0],
            dim,
        })
    }

    fn raw_dot(&self, i: usize, j: usize) -> T {
        let a = &self.left_unit[i * self.dim..(i + 1) * self.dim];
        let b = &self.right_unit[j * self.dim..(j + 1) * self.dim];
        a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
    }

    fn similarities(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                data.push(clamp_unit(self.raw_dot(i, j)));
            }
        }
        Tensor::new(vec![self.rows, self.cols], data).expect("rows × cols")
    }
}

fn normalize_rows<T: Real>(x: &Tensor<T>, side: &'static str) -> Result<(Vec<T>, Vec<T>)> {
    let dim = x.shape()[1];
    let mut unit = Vec::with_capacity(x.len());
    let mut norms = Vec::with_capacity(x.shape()[0]);
    for row in 0..x.shape()[0] {
        let r = &x.data()[row * dim..(row + 1) * dim];
        let n = norm(r);
        if n.as_f64() <= MIN_NORM || !n.is_finite() {
            return Err(Error::DegenerateEmbedding { side, row });
        }
        unit.extend(r.iter().map(|&v| v / n));
        norms.push(n);
    }
    Ok((unit, norms))
}

impl<T: Real> BackwardOp<T> for UnitRows<T> {
    fn name(&self) -> &'static str {
        "cosine_similarity"
    }

    fn backward(
        &self,
        grad_output: &[T],
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        needs_grad: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let d = self.dim;
        // d cos(a, b) / d a = (b̂ − cos · â) / ‖a‖
        let grad_left = needs_grad[0].then(|| {
            let mut g = vec![T::zero(); self.rows * d];
            for i in 0..self.rows {
                let ti = &self.left_unit[i * d..(i + 1) * d];
                for j in 0..self.cols {
                    let gij = grad_output[i * self.cols + j] / self.left_norm[i];
                    let s = self.raw_dot(i, j);
                    let ej = &self.right_unit[j * d..(j + 1) * d];
                    for k in 0..d {
                        g[i * d + k] = g[i * d + k] + gij * (ej[k] - s * ti[k]);
                    }
                }
            }
            g
        });
        let grad_right = needs_grad[1].then(|| {
            let mut g = vec![T::zero(); self.cols * d];
            for j in 0..self.cols {
                let ej = &self.right_unit[j * d..(j + 1) * d];
                for i in 0..self.rows {
                    let gij = grad_output[i * self.cols + j] / self.right_norm[j];
                    let s = self.raw_dot(i, j);
                    let ti = &self.left_unit[i * d..(i + 1) * d];
                    for k in 0..d {
                        g[j * d + k] = g[j * d + k] + gij * (ti[k] - s * ej[k]);
                    }
                }
            }
            g
        });
        vec![grad_left, grad_right]
    }
}

struct ContrastiveLossBackward<T> {
    n: usize,
    row_probs: Vec<T>,
    col_probs: Vec<T>,
}

impl<T: Real> BackwardOp<T> for ContrastiveLossBackward<T> {
    fn name(&self) -> &'static str {
        "contrastive_loss"
    }

    fn backward(
        &self,
        grad_output: &[T],
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        needs_grad: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let n = self.n;
        let upstream = grad_output[0];
        let tau = inputs[1].data()[0];
        let sims = inputs[0].data();
        let scale = upstream / T::from_usize(2 * n);
        // dL/dZ = (P_row + P_col − 2I) / 2N
        let dz: Vec<T> = (0..n * n)
            .map(|idx| {
                let diag = if idx / n == idx % n { T::from_f64(2.0) } else { T::zero() };
                scale * (self.row_probs[idx] + self.col_probs[idx] - diag)
            })
            .collect();
        let grad_sim = needs_grad[0].then(|| dz.iter().map(|&g| g / tau).collect());
        let grad_tau = needs_grad[1].then(|| {
            let s = dz
                .iter()
                .zip(sims)
                .fold(T::zero(), |acc, (&g, &v)| acc + g * v);
            vec![-s / (tau * tau)]
        });
        vec![grad_sim, grad_tau]
    }
}
