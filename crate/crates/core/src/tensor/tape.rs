use super::kernels::{self, Conv1dGeometry};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an op defined outside this module.
///
/// `backward` receives the upstream gradient, the forward inputs and output,
/// and a mask of which inputs need a gradient. It returns one entry per
/// input, `None` where no gradient is required.
pub trait BackwardOp<T: Real> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        grad_output: &[T],
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        needs_grad: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

/// How a batch-norm node normalizes its input.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize by statistics of the current batch.
    Train,
    /// Normalize by stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics of one training-mode batch-norm call, used to
/// update running statistics. `var` is the unbiased estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Exp(Var),
    Relu(Var),
    Conv1d {
        input: Var,
        weight: Var,
        geom: Conv1dGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn BackwardOp<T>>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so reverse index order is a valid
/// topological order for the backward sweep.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of requires-grad leaves after [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert!(
            !inputs.iter().all(|v| self.value(*v).is_finite()) || value.is_finite(),
            "non-finite output from finite inputs"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.exp());
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    /// `input: [N, C_in, L]`, `weight: [C_out, C_in, K]` → `[N, C_out, L_out]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        if x.ndim() != 3 || w.ndim() != 3 || x.shape()[1] != w.shape()[1] || stride == 0 {
            return Err(Error::dim("conv1d", x.shape(), w.shape()));
        }
        let geom = Conv1dGeometry {
            batch: x.shape()[0],
            in_channels: x.shape()[1],
            length: x.shape()[2],
            out_channels: w.shape()[0],
            kernel: w.shape()[2],
            stride,
            padding,
        };
        if geom.length + 2 * padding < geom.kernel {
            return Err(Error::dim("conv1d", x.shape(), w.shape()));
        }
        let data = kernels::conv1d_forward(x.data(), w.data(), &geom);
        let out = Tensor::new(vec![geom.batch, geom.out_channels, geom.out_length()], data)?;
        Ok(self.push(out, Op::Conv1d { input, weight, geom }, &[input, weight]))
    }

    /// Batch norm over `[N, C, L]` with per-channel affine `gamma`, `beta`.
    /// In train mode also returns the batch moments for running-stat updates.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let x = self.value(input);
        if x.ndim() != 3 {
            return Err(Error::Shape(format!(
                "batch_norm expects [N, C, L], got {:?}",
                x.shape()
            )));
        }
        let (n, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != [c] || b.shape() != [c] {
            return Err(Error::dim("batch_norm", x.shape(), g.shape()));
        }
        let count = n * l;
        let eps = T::from_f64(eps);
        let (mean, var, moments) = match mode {
            BnMode::Train => {
                if count < 2 {
                    return Err(Error::DegenerateBatch { count });
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let m = T::from_usize(count);
                for ch in 0..c {
                    let mut s = T::zero();
                    for i in 0..n {
                        s = s + x.data()[(i * c + ch) * l..][..l].iter().copied().sum();
                    }
                    let mu = s / m;
                    let mut ss = T::zero();
                    for i in 0..n {
                        for &v in &x.data()[(i * c + ch) * l..][..l] {
                            ss = ss + (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = ss / m;
                }
                let unbiased = var
                    .iter()
                    .map(|&v| v * m / (m - T::one()))
                    .collect();
                let moments = BatchMoments {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(moments))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("batch_norm", &[c], &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut normalized = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * l;
                for j in base..base + l {
                    let xh = (x.data()[j] - mean[ch]) * inv_std[ch];
                    normalized[j] = xh;
                    out[j] = g.data()[ch] * xh + b.data()[ch];
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        let op = Op::BatchNorm {
            input,
            gamma,
            beta,
            normalized,
            inv_std,
            batch_stats: moments.is_some(),
        };
        Ok((self.push(out, op, &[input, gamma, beta]), moments))
    }

    /// Max pooling along the last axis of `[N, C, L]`.
    pub fn maxpool1d(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() != 3 || stride == 0 || kernel == 0 || padding >= kernel || x.shape()[2] + 2 * padding < kernel {
            return Err(Error::Shape(format!(
                "maxpool1d(kernel={kernel}, stride={stride}, padding={padding}) on {:?}",
                x.shape()
            )));
        }
        let (n, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (data, argmax) = kernels::maxpool1d_forward(x.data(), n * c, l, kernel, stride, padding);
        let lout = data.len() / (n * c);
        let out = Tensor::new(vec![n, c, lout], data)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }, &[input]))
    }

    /// Mean over the last axis: `[N, C, L]` → `[N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() != 3 || x.shape()[2] == 0 {
            return Err(Error::Shape(format!(
                "global_avg_pool expects [N, C, L], got {:?}",
                x.shape()
            )));
        }
        let (n, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let inv = T::one() / T::from_usize(l);
        let data = x
            .data()
            .chunks(l)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(input), &[input]))
    }

    /// `input: [N, F_in]`, `weight: [F_out, F_in]`, `bias: [F_out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.ndim() != 2 || w.ndim() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(Error::dim("linear", x.shape(), w.shape()));
        }
        if b.shape() != [w.shape()[0]] {
            return Err(Error::dim("linear bias", w.shape(), b.shape()));
        }
        let (n, f_in) = (x.shape()[0], x.shape()[1]);
        let data = kernels::linear_forward(x.data(), w.data(), b.data(), n, f_in);
        let out = Tensor::new(vec![n, w.shape()[0]], data)?;
        Ok(self.push(out, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn BackwardOp<T>>) -> Var {
        let inputs_vec = inputs.to_vec();
        self.push(output, Op::Custom { inputs: inputs_vec, op }, inputs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    leaf_grads[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, || g.clone());
                    self.accumulate(&mut grads, *b, || g.clone());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    self.accumulate(&mut grads, *a, || g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                    self.accumulate(&mut grads, *b, || g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    self.accumulate(&mut grads, *a, || vec![g[0]; n]);
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    self.accumulate(&mut grads, *a, || g.iter().zip(y).map(|(&d, &e)| d * e).collect());
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    self.accumulate(&mut grads, *a, || {
                        g.iter()
                            .zip(x)
                            .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                            .collect()
                    });
                }
                Op::Conv1d { input, weight, geom } => {
                    let (x, w) = (self.value(*input).data(), self.value(*weight).data());
                    self.accumulate(&mut grads, *input, || kernels::conv1d_backward_input(&g, w, geom));
                    self.accumulate(&mut grads, *weight, || kernels::conv1d_backward_weight(&g, x, geom));
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                    batch_stats,
                } => {
                    let shape = node.value.shape();
                    let (n, c, l) = (shape[0], shape[1], shape[2]);
                    let mut sum_dy = vec![T::zero(); c];
                    let mut sum_dy_xh = vec![T::zero(); c];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * l;
                            for j in base..base + l {
                                sum_dy[ch] = sum_dy[ch] + g[j];
                                sum_dy_xh[ch] = sum_dy_xh[ch] + g[j] * normalized[j];
                            }
                        }
                    }
                    let gam = self.value(*gamma).data();
                    self.accumulate(&mut grads, *input, || {
                        let m = T::from_usize(n * l);
                        let mut dx = vec![T::zero(); g.len()];
                        for i in 0..n {
                            for ch in 0..c {
                                let base = (i * c + ch) * l;
                                let scale = gam[ch] * inv_std[ch];
                                for j in base..base + l {
                                    dx[j] = if *batch_stats {
                                        scale / m * (m * g[j] - sum_dy[ch] - normalized[j] * sum_dy_xh[ch])
                                    } else {
                                        scale * g[j]
                                    };
                                }
                            }
                        }
                        dx
                    });
                    self.accumulate(&mut grads, *gamma, || sum_dy_xh.clone());
                    self.accumulate(&mut grads, *beta, || sum_dy.clone());
                }
                Op::MaxPool { input, argmax } => {
                    let n_in = self.value(*input).len();
                    self.accumulate(&mut grads, *input, || {
                        let mut dx = vec![T::zero(); n_in];
                        for (&i, &d) in argmax.iter().zip(&g) {
                            dx[i] = dx[i] + d;
                        }
                        dx
                    });
                }
                Op::GlobalAvgPool(input) => {
                    let l = self.value(*input).shape()[2];
                    let inv = T::one() / T::from_usize(l);
                    self.accumulate(&mut grads, *input, || {
                        g.iter().flat_map(|&d| std::iter::repeat_n(d * inv, l)).collect()
                    });
                }
                Op::Linear { input, weight, bias } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (n, f_in) = (x.shape()[0], x.shape()[1]);
                    let f_out = w.shape()[0];
                    self.accumulate(&mut grads, *input, || {
                        let mut dx = vec![T::zero(); n * f_in];
                        for i in 0..n {
                            for o in 0..f_out {
                                let d = g[i * f_out + o];
                                let wo = &w.data()[o * f_in..(o + 1) * f_in];
                                for (slot, &wv) in dx[i * f_in..(i + 1) * f_in].iter_mut().zip(wo) {
                                    *slot = *slot + d * wv;
                                }
                            }
                        }
                        dx
                    });
                    self.accumulate(&mut grads, *weight, || {
                        let mut dw = vec![T::zero(); f_out * f_in];
                        for o in 0..f_out {
                            let row = &mut dw[o * f_in..(o + 1) * f_in];
                            for i in 0..n {
                                let d = g[i * f_out + o];
                                let xi = &x.data()[i * f_in..(i + 1) * f_in];
                                for (slot, &xv) in row.iter_mut().zip(xi) {
                                    *slot = *slot + d * xv;
                                }
                            }
                        }
                        dw
                    });
                    self.accumulate(&mut grads, *bias, || {
                        (0..f_out)
                            .map(|o| (0..n).map(|i| g[i * f_out + o]).sum())
                            .collect()
                    });
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                    let needs: Vec<bool> = inputs.iter().map(|v| self.requires_grad(*v)).collect();
                    let parts = op.backward(&g, &values, &node.value, &needs);
                    for ((var, part), need) in inputs.iter().zip(parts).zip(needs) {
                        if let (Some(part), true) = (part, need) {
                            debug_assert_eq!(part.len(), self.value(*var).len(), "{}", op.name());
                            self.accumulate(&mut grads, *var, move || part);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], var: Var, contribution: impl FnOnce() -> Vec<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let c = contribution();
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(c) {
                    *e = *e + v;
                }
            }
            slot @ None => *slot = Some(c),
        }
    }
}
