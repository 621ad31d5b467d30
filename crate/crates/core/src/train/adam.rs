use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Decay applied directly to the weights (`true`) or folded into the
    /// gradient (`false`).
    pub decoupled: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn new(learning_rate: f64, weight_decay: f64, decoupled: bool) -> Self {
        Self {
            learning_rate,
            weight_decay,
            decoupled,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// A parameter tensor handed to [`adam_step`].
pub struct ParamSlot<'a, T> {
    pub name: &'a str,
    pub value: &'a mut Tensor<T>,
    pub decay: bool,
}

/// First and second moments per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<T>> = sizes.into_iter().map(|n| vec![T::zero(); n]).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Gradients are checked before any tensor
/// is touched, so a rejected step leaves parameters and state unchanged.
pub fn adam_step<T: Real>(
    params: &mut [ParamSlot<'_, T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hp: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.value.shape() != g.shape() || m.len() != g.len() {
            return Err(Error::dim("adam", p.value.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c = |v: f64| T::from_f64(v);
    let (b1, b2, eps, lr, wd) = (c(hp.beta1), c(hp.beta2), c(hp.eps), c(hp.learning_rate), c(hp.weight_decay));
    let bias1 = T::one() - b1.powi(t);
    let bias2 = T::one() - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let decay = p.decay && hp.weight_decay != 0.0;
        for (j, (w, &gj)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            let grad = if decay && !hp.decoupled { gj + wd * *w } else { gj };
            m[j] = b1 * m[j] + (T::one() - b1) * grad;
            v[j] = b2 * v[j] + (T::one() - b2) * grad * grad;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            if decay && hp.decoupled {
                *w = *w - lr * wd * *w;
            }
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
