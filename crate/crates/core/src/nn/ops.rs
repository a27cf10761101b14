//! Parameter-free layers plus the fully connected layer.

use serde::{Deserialize, Serialize};

use crate::nn::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    HardSwish,
    HardSigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        let three = T::from_f64_lossy(3.0);
        let six = T::from_f64_lossy(6.0);
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::HardSwish => x * (x + three).max(T::zero()).min(six) / six,
            Activation::HardSigmoid => (x + three).max(T::zero()).min(six) / six,
        }
    }

    /// Derivative with respect to the pre-activation input.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        let three = T::from_f64_lossy(3.0);
        let six = T::from_f64_lossy(6.0);
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::HardSwish => {
                if x <= -three {
                    T::zero()
                } else if x >= three {
                    T::one()
                } else {
                    (x + x + three) / six
                }
            }
            Activation::HardSigmoid => {
                if x <= -three || x >= three {
                    T::zero()
                } else {
                    T::one() / six
                }
            }
        }
    }

    pub fn forward<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.apply(v))
    }

    pub fn backward<T: Scalar>(self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let data = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&xv, &d)| d * self.derivative(xv))
            .collect();
        Tensor::from_vec(x.shape(), data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolGeometry {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    /// Valid input index ranges covered by output cell `(oy, ox)`.
    fn window(&self, oy: usize, ox: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let p = self.padding as isize;
        let y0 = (oy * self.stride) as isize - p;
        let x0 = (ox * self.stride) as isize - p;
        let y1 = (y0 + self.kernel as isize).min(h as isize);
        let x1 = (x0 + self.kernel as isize).min(w as isize);
        (y0.max(0) as usize, y1 as usize, x0.max(0) as usize, x1 as usize)
    }
}

/// Max pooling; returns the flat argmax index of each output for backward.
pub fn max_pool_forward<T: Scalar>(g: &PoolGeometry, x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = g.output_size(h, w);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut arg = Vec::with_capacity(out.len());
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, y1, x0, x1) = g.window(oy, ox, h, w);
                    let mut best = T::neg_infinity();
                    let mut best_idx = base + y0 * w + x0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let v = x.data()[base + y * w + xx];
                            if v > best {
                                best = v;
                                best_idx = base + y * w + xx;
                            }
                        }
                    }
                    out.data_mut()[((b * c + ch) * ho + oy) * wo + ox] = best;
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward<T: Scalar>(input_shape: [usize; 4], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &d) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[i] += d;
    }
    dx
}

/// Average pooling over the valid (unpadded) part of each window.
pub fn avg_pool_forward<T: Scalar>(g: &PoolGeometry, x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = g.output_size(h, w);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, y1, x0, x1) = g.window(oy, ox, h, w);
                    let mut s = T::zero();
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            s += x.data()[base + y * w + xx];
                        }
                    }
                    let cnt = T::from_usize_lossy((y1 - y0) * (x1 - x0));
                    out.data_mut()[((b * c + ch) * ho + oy) * wo + ox] = s / cnt;
                }
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Scalar>(g: &PoolGeometry, input_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let (ho, wo) = (dy.height(), dy.width());
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, y1, x0, x1) = g.window(oy, ox, h, w);
                    let cnt = T::from_usize_lossy((y1 - y0) * (x1 - x0));
                    let d = dy.data()[((b * c + ch) * ho + oy) * wo + ox] / cnt;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            dx.data_mut()[base + y * w + xx] += d;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let inv = T::one() / T::from_usize_lossy(hw);
    let mut out = Vec::with_capacity(n * c);
    for b in 0..n {
        let item = x.item(b);
        for ch in 0..c {
            out.push(item[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() * inv);
        }
    }
    Tensor::from_vec([n, c, 1, 1], out)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let hw = h * w;
    let inv = T::one() / T::from_usize_lossy(hw);
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        let d = dy.item(b);
        let out = dx.item_mut(b);
        for ch in 0..c {
            out[ch * hw..(ch + 1) * hw].fill(d[ch] * inv);
        }
    }
    dx
}

/// Channel concatenation of several `N x C_i x H x W` tensors.
pub fn concat_forward<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let [n, _, h, w] = parts[0].shape();
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        let mut off = 0;
        let dst = out.item_mut(b);
        for p in parts {
            assert_eq!((p.height(), p.width()), (h, w), "concat spatial mismatch");
            let src = p.item(b);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    out
}

pub fn concat_backward<T: Scalar>(channels: &[usize], dy: &Tensor<T>) -> Vec<Tensor<T>> {
    let [n, _, h, w] = dy.shape();
    let hw = h * w;
    let mut grads: Vec<Tensor<T>> = channels.iter().map(|&c| Tensor::zeros([n, c, h, w])).collect();
    for b in 0..n {
        let src = dy.item(b);
        let mut off = 0;
        for g in grads.iter_mut() {
            let len = g.channels() * hw;
            g.item_mut(b).copy_from_slice(&src[off..off + len]);
            off += len;
        }
    }
    grads
}

/// `x * s` where `s` is `N x C x 1 x 1` (squeeze-excitation gating).
pub fn channel_scale_forward<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    assert_eq!(s.shape(), [n, c, 1, 1], "channel scale shape");
    let hw = h * w;
    let mut out = x.clone();
    for b in 0..n {
        let sv = s.item(b);
        let o = out.item_mut(b);
        for ch in 0..c {
            o[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v *= sv[ch]);
        }
    }
    out
}

pub fn channel_scale_backward<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut dx = Tensor::zeros(x.shape());
    let mut ds = Tensor::zeros(s.shape());
    for b in 0..n {
        for ch in 0..c {
            let sv = s.item(b)[ch];
            let mut acc = T::zero();
            for i in ch * hw..(ch + 1) * hw {
                let d = dy.item(b)[i];
                dx.item_mut(b)[i] = d * sv;
                acc += d * x.item(b)[i];
            }
            ds.item_mut(b)[ch] = acc;
        }
    }
    (dx, ds)
}

/// Fully connected layer over flattened `N x F x 1 x 1` inputs.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    /// `[out, in]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn in_features(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        let fin = x.item_len();
        assert_eq!(fin, self.in_features(), "linear input features");
        let fout = self.out_features();
        let mut y = Vec::with_capacity(n * fout);
        for _ in 0..n {
            y.extend_from_slice(&self.bias.value);
        }
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            x.data(),
            false,
            &self.weight.value,
            true,
            T::one(),
            &mut y,
        );
        Tensor::from_vec([n, fout, 1, 1], y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: Option<(&mut [T], &mut [T])>) -> Tensor<T> {
        let n = x.batch();
        let fin = self.in_features();
        let fout = self.out_features();
        if let Some((gw, gb)) = grads {
            T::gemm(fout, n, fin, T::one(), dy.data(), true, x.data(), false, T::one(), gw);
            for b in 0..n {
                for (acc, &d) in gb.iter_mut().zip(dy.item(b)) {
                    *acc += d;
                }
            }
        }
        let mut dx = vec![T::zero(); n * fin];
        T::gemm(
            n,
            fout,
            fin,
            T::one(),
            dy.data(),
            false,
            &self.weight.value,
            false,
            T::zero(),
            &mut dx,
        );
        Tensor::from_vec(x.shape(), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(len: usize) -> Vec<f64> {
        (0..len).map(|k| ((k * 7 % 9) as f64 - 4.0) / 3.0).collect()
    }

    fn fd_check(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> Tensor<f64>, analytic: &Tensor<f64>, r: &[f64]) {
        let eps = 1e-6;
        let loss = |t: &Tensor<f64>| -> f64 { f(t).data().iter().zip(r).map(|(a, b)| a * b).sum() };
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!(
                (fd - analytic.data()[idx]).abs() < 1e-6,
                "idx {idx}: {fd} vs {}",
                analytic.data()[idx]
            );
        }
    }

    fn input() -> Tensor<f64> {
        // distinct values keep max pooling differentiable
        Tensor::from_vec(
            [2, 2, 5, 5],
            (0..100).map(|i| ((i * 37 % 101) as f64) / 17.0 - 2.9).collect(),
        )
    }

    #[test]
    fn activation_gradients() {
        let x = Tensor::from_vec([1, 1, 2, 4], vec![-4.1, -2.0, -0.5, 0.3, 1.7, 2.9, 3.5, 0.01]);
        for act in [Activation::Relu, Activation::HardSwish, Activation::HardSigmoid] {
            let y = act.forward(&x);
            let r = probe(y.len());
            let dx = act.backward(&x, &Tensor::from_vec(y.shape(), r.clone()));
            fd_check(&x, |t| act.forward(t), &dx, &r);
        }
    }

    #[test]
    fn pooling_gradients() {
        let x = input();
        for g in [
            PoolGeometry {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            PoolGeometry {
                kernel: 2,
                stride: 2,
                padding: 0,
            },
            PoolGeometry {
                kernel: 3,
                stride: 1,
                padding: 1,
            },
        ] {
            let (y, arg) = max_pool_forward(&g, &x);
            let r = probe(y.len());
            let dy = Tensor::from_vec(y.shape(), r.clone());
            let dx = max_pool_backward(x.shape(), &arg, &dy);
            fd_check(&x, |t| max_pool_forward(&g, t).0, &dx, &r);

            let y = avg_pool_forward(&g, &x);
            let dy = Tensor::from_vec(y.shape(), probe(y.len()));
            let dx = avg_pool_backward(&g, x.shape(), &dy);
            fd_check(&x, |t| avg_pool_forward(&g, t), &dx, &probe(y.len()));
        }
        let y = global_avg_pool_forward(&x);
        let r = probe(y.len());
        let dx = global_avg_pool_backward(x.shape(), &Tensor::from_vec(y.shape(), r.clone()));
        fd_check(&x, global_avg_pool_forward, &dx, &r);
    }

    #[test]
    fn channel_scale_and_linear_gradients() {
        let x = input();
        let s = Tensor::from_vec([2, 2, 1, 1], vec![0.5, -1.5, 2.0, 0.25]);
        let y = channel_scale_forward(&x, &s);
        let r = probe(y.len());
        let (dx, ds) = channel_scale_backward(&x, &s, &Tensor::from_vec(y.shape(), r.clone()));
        fd_check(&x, |t| channel_scale_forward(t, &s), &dx, &r);
        fd_check(&s, |t| channel_scale_forward(&x, t), &ds, &r);

        let lin = Linear {
            weight: Param::new("w", vec![3, 4], probe(12)),
            bias: Param::new("b", vec![3], vec![0.1, -0.2, 0.3]),
        };
        let xf = Tensor::from_vec([2, 4, 1, 1], probe(8).iter().map(|v| v * 0.7 + 0.1).collect());
        let y = lin.forward(&xf);
        assert_eq!(y.shape(), [2, 3, 1, 1]);
        let r = probe(6);
        let mut gw = vec![0.0; 12];
        let mut gb = vec![0.0; 3];
        let dx = lin.backward(&xf, &Tensor::from_vec(y.shape(), r.clone()), Some((&mut gw, &mut gb)));
        fd_check(&xf, |t| lin.forward(t), &dx, &r);
        // dW[o][i] = sum_b dy[b][o] x[b][i]
        for o in 0..3 {
            for i in 0..4 {
                let want: f64 = (0..2).map(|b| r[b * 3 + o] * xf.data()[b * 4 + i]).sum();
                assert!((gw[o * 4 + i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_round_trip() {
        let a = Tensor::from_vec([2, 1, 2, 2], (0..8).map(f64::from).collect());
        let b = Tensor::from_vec([2, 2, 2, 2], (8..24).map(f64::from).collect());
        let y = concat_forward(&[&a, &b]);
        assert_eq!(y.shape(), [2, 3, 2, 2]);
        assert_eq!(&y.item(1)[..4], a.item(1));
        let parts = concat_backward(&[1, 2], &y);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
