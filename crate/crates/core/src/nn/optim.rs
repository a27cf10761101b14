//! Adam optimiser and softmax cross-entropy.

use crate::nn::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads` is aligned with `params`.
    pub fn step(&mut self, params: Vec<&mut Param<T>>, grads: &[Vec<T>]) {
        assert_eq!(params.len(), grads.len(), "gradient count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let lr = T::from_f64_lossy(self.lr);
        let eps = T::from_f64_lossy(self.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Mean softmax cross-entropy over the batch, with its gradient w.r.t.
/// the logits. Returns `(loss, grad, per-item loss)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (T, Tensor<T>, Vec<T>) {
    let n = logits.batch();
    let k = logits.item_len();
    assert_eq!(labels.len(), n, "label count");
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut grad = Tensor::zeros(logits.shape());
    let mut per_item = Vec::with_capacity(n);
    for (b, &label) in labels.iter().enumerate() {
        let z = logits.item(b);
        let probs = softmax(z);
        let p = probs[label];
        // clamp zero probabilities but let NaN through to the caller
        let p = if p.is_nan() { p } else { p.max(T::min_positive_value()) };
        per_item.push(-p.ln());
        let g = grad.item_mut(b);
        for j in 0..k {
            let target = if j == label { T::one() } else { T::zero() };
            g[j] = (probs[j] - target) * inv_n;
        }
    }
    let loss = per_item.iter().copied().sum::<T>() * inv_n;
    (loss, grad, per_item)
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(z: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}
