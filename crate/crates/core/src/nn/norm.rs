//! Batch normalisation over the `N x H x W` axes of each channel.

use crate::nn::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Values kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch statistics (training mode only): mean and unbiased variance.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.weight"), vec![channels], T::one()),
            beta: Param::filled(format!("{name}.bias"), vec![channels], T::zero()),
            running_mean: Param::filled(format!("{name}.running_mean"), vec![channels], T::zero()),
            running_var: Param::filled(format!("{name}.running_var"), vec![channels], T::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> (Tensor<T>, BnCache<T>) {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let count = n * hw;
        let eps = T::from_f64_lossy(self.eps);
        let (mean, var, batch_stats) = if train {
            let inv_count = T::one() / T::from_usize_lossy(count);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += x.item(b)[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>();
                }
                let m = s * inv_count;
                let mut v = T::zero();
                for b in 0..n {
                    for &val in &x.item(b)[ch * hw..(ch + 1) * hw] {
                        let d = val - m;
                        v += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = v * inv_count;
            }
            let unbiased = if count > 1 {
                let f = T::from_usize_lossy(count) / T::from_usize_lossy(count - 1);
                var.iter().map(|&v| v * f).collect()
            } else {
                var.clone()
            };
            (mean.clone(), var, Some((mean, unbiased)))
        } else {
            (self.running_mean.value.clone(), self.running_var.value.clone(), None)
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for b in 0..n {
            let xi = x.item(b);
            for ch in 0..c {
                let (m, s) = (mean[ch], inv_std[ch]);
                let (gm, bt) = (self.gamma.value[ch], self.beta.value[ch]);
                let range = ch * hw..(ch + 1) * hw;
                let xh = &mut x_hat.item_mut(b)[range.clone()];
                for (o, &v) in xh.iter_mut().zip(&xi[range.clone()]) {
                    *o = (v - m) * s;
                }
                let xh = &x_hat.item(b)[range.clone()];
                for (o, &v) in y.item_mut(b)[range].iter_mut().zip(xh) {
                    *o = gm * v + bt;
                }
            }
        }
        (
            y,
            BnCache {
                x_hat,
                inv_std,
                batch_stats,
            },
        )
    }

    pub fn update_running(&mut self, cache: &BnCache<T>) {
        if let Some((mean, var)) = &cache.batch_stats {
            let m = T::from_f64_lossy(self.momentum);
            let keep = T::one() - m;
            for (r, &v) in self.running_mean.value.iter_mut().zip(mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in self.running_var.value.iter_mut().zip(var) {
                *r = keep * *r + m * v;
            }
        }
    }

    pub fn backward(&self, cache: &BnCache<T>, dy: &Tensor<T>, grads: Option<(&mut [T], &mut [T])>) -> Tensor<T> {
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let count = T::from_usize_lossy(n * hw);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for b in 0..n {
            let d = dy.item(b);
            let xh = cache.x_hat.item(b);
            for ch in 0..c {
                for i in ch * hw..(ch + 1) * hw {
                    sum_dy[ch] += d[i];
                    sum_dy_xhat[ch] += d[i] * xh[i];
                }
            }
        }
        if let Some((gg, gb)) = grads {
            for ch in 0..c {
                gg[ch] += sum_dy_xhat[ch];
                gb[ch] += sum_dy[ch];
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        let train = cache.batch_stats.is_some();
        for b in 0..n {
            let d = dy.item(b);
            let xh = cache.x_hat.item(b);
            let out = dx.item_mut(b);
            for ch in 0..c {
                let g = self.gamma.value[ch] * cache.inv_std[ch];
                if train {
                    let mean_dy = sum_dy[ch] / count;
                    let mean_dyx = sum_dy_xhat[ch] / count;
                    for i in ch * hw..(ch + 1) * hw {
                        out[i] = g * (d[i] - mean_dy - xh[i] * mean_dyx);
                    }
                } else {
                    for i in ch * hw..(ch + 1) * hw {
                        out[i] = g * d[i];
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn() -> BatchNorm<f64> {
        let mut bn = BatchNorm::new("bn", 3);
        bn.gamma.value = vec![1.5, -0.5, 0.8];
        bn.beta.value = vec![0.1, 0.2, -0.3];
        bn.running_mean.value = vec![0.2, -0.1, 0.0];
        bn.running_var.value = vec![1.3, 0.7, 2.0];
        bn
    }

    fn x() -> Tensor<f64> {
        Tensor::from_vec(
            [2, 3, 2, 2],
            (0..24)
                .map(|i| ((i * 5 % 7) as f64 - 3.0) / 2.0 + i as f64 * 0.01)
                .collect(),
        )
    }

    #[test]
    fn train_mode_normalises_each_channel() {
        let (y, _) = bn().forward(&x(), true);
        let mut b = bn();
        b.gamma.value = vec![1.0; 3];
        b.beta.value = vec![0.0; 3];
        let (z, _) = b.forward(&x(), true);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|n| z.item(n)[ch * 4..(ch + 1) * 4].to_vec()).collect();
            let m: f64 = vals.iter().sum::<f64>() / 8.0;
            let v: f64 = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
        assert!(y.is_finite());
    }

    #[test]
    fn backward_matches_finite_differences_in_both_modes() {
        for train in [true, false] {
            let layer = bn();
            let x = x();
            let (y, cache) = layer.forward(&x, train);
            let r: Vec<f64> = (0..y.len()).map(|k| ((k * 3 % 5) as f64 - 2.0) / 3.0).collect();
            let dy = Tensor::from_vec(y.shape(), r.clone());
            let mut gg = vec![0.0; 3];
            let mut gb = vec![0.0; 3];
            let dx = layer.backward(&cache, &dy, Some((&mut gg, &mut gb)));
            let loss = |l: &BatchNorm<f64>, x: &Tensor<f64>| -> f64 {
                l.forward(x, train).0.data().iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let eps = 1e-6;
            for idx in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[idx] += eps;
                let mut xm = x.clone();
                xm.data_mut()[idx] -= eps;
                let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * eps);
                assert!((fd - dx.data()[idx]).abs() < 1e-6, "train={train} idx={idx}");
            }
            for ch in 0..3 {
                let mut lp = layer.clone();
                lp.gamma.value[ch] += eps;
                let mut lm = layer.clone();
                lm.gamma.value[ch] -= eps;
                let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * eps);
                assert!((fd - gg[ch]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut layer = bn();
        let (_, cache) = layer.forward(&x(), true);
        let before = layer.running_mean.value.clone();
        layer.update_running(&cache);
        let (mean, _) = cache.batch_stats.as_ref().unwrap();
        for ch in 0..3 {
            let want = 0.9 * before[ch] + 0.1 * mean[ch];
            assert!((layer.running_mean.value[ch] - want).abs() < 1e-15);
        }
    }
}
