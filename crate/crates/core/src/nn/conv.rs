//! 2-D convolution with groups, rectangular kernels, and zero padding.

use crate::nn::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        assert!(
            h + 2 * ph >= kh && w + 2 * pw >= kw,
            "input {h}x{w} smaller than kernel {kh}x{kw}"
        );
        ((h + 2 * ph - kh) / self.stride + 1, (w + 2 * pw - kw) / self.stride + 1)
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.padding == (0, 0)
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels && self.groups > 1
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub geometry: ConvGeometry,
    /// `[out, in / groups, kh, kw]`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

/// Unfold one group of one image into a `(cin * kh * kw) x (ho * wo)` matrix.
fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T], h: usize, w: usize, ho: usize, wo: usize, col: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (ph, pw) = g.padding;
    let s = g.stride;
    let cin = input.len() / (h * w);
    let hw_out = ho * wo;
    for c in 0..cin {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[((c * kh + ky) * kw + kx) * hw_out..][..hw_out];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - ph as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pw as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate column gradients back onto the input.
fn col2im<T: Scalar>(g: &ConvGeometry, col: &[T], h: usize, w: usize, ho: usize, wo: usize, out: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (ph, pw) = g.padding;
    let s = g.stride;
    let cin = out.len() / (h * w);
    let hw_out = ho * wo;
    for c in 0..cin {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &col[((c * kh + ky) * kw + kx) * hw_out..][..hw_out];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s + kx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let g = &self.geometry;
        let [n, c, h, w] = x.shape();
        assert_eq!(c, g.in_channels, "conv input channels");
        let (ho, wo) = g.output_size(h, w);
        let mut out = Tensor::zeros([n, g.out_channels, ho, wo]);
        if g.is_depthwise() {
            self.depthwise_forward(x, &mut out);
        } else {
            let cig = g.in_per_group();
            let cog = g.out_per_group();
            let (kh, kw) = g.kernel;
            let ckk = cig * kh * kw;
            let hw_out = ho * wo;
            let mut col = if g.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); ckk * hw_out]
            };
            for b in 0..n {
                let xin = x.item(b);
                let yout = out.item_mut(b);
                for grp in 0..g.groups {
                    let xg = &xin[grp * cig * h * w..(grp + 1) * cig * h * w];
                    let wg = &self.weight.value[grp * cog * ckk..(grp + 1) * cog * ckk];
                    let yg = &mut yout[grp * cog * hw_out..(grp + 1) * cog * hw_out];
                    let cols: &[T] = if g.is_pointwise() {
                        xg
                    } else {
                        im2col(g, xg, h, w, ho, wo, &mut col);
                        &col
                    };
                    T::gemm(cog, ckk, hw_out, T::one(), wg, false, cols, false, T::zero(), yg);
                }
            }
        }
        if let Some(bias) = &self.bias {
            let hw = ho * wo;
            for b in 0..n {
                let y = out.item_mut(b);
                for (oc, &bv) in bias.value.iter().enumerate() {
                    y[oc * hw..(oc + 1) * hw].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        out
    }

    fn depthwise_forward(&self, x: &Tensor<T>, out: &mut Tensor<T>) {
        let g = &self.geometry;
        let [n, c, h, w] = x.shape();
        let (ho, wo) = (out.height(), out.width());
        let (kh, kw) = g.kernel;
        let (ph, pw) = (g.padding.0 as isize, g.padding.1 as isize);
        let s = g.stride;
        for b in 0..n {
            for ch in 0..c {
                let plane = &x.item(b)[ch * h * w..(ch + 1) * h * w];
                let k = &self.weight.value[ch * kh * kw..(ch + 1) * kh * kw];
                let dst = &mut out.item_mut(b)[ch * ho * wo..(ch + 1) * ho * wo];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = T::zero();
                        for ky in 0..kh {
                            let iy = (oy * s + ky) as isize - ph;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &plane[iy as usize * w..];
                            for kx in 0..kw {
                                let ix = (ox * s + kx) as isize - pw;
                                if ix >= 0 && ix < w as isize {
                                    acc += row[ix as usize] * k[ky * kw + kx];
                                }
                            }
                        }
                        dst[oy * wo + ox] = acc;
                    }
                }
            }
        }
    }

    /// Returns the input gradient; parameter gradients are accumulated into
    /// `grad_w` / `grad_b` when given.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        mut grad_w: Option<&mut [T]>,
        grad_b: Option<&mut [T]>,
    ) -> Tensor<T> {
        let g = &self.geometry;
        let [n, _, h, w] = x.shape();
        let (ho, wo) = (dy.height(), dy.width());
        let hw_out = ho * wo;
        if let Some(gb) = grad_b {
            for b in 0..n {
                let d = dy.item(b);
                for (oc, acc) in gb.iter_mut().enumerate() {
                    *acc += d[oc * hw_out..(oc + 1) * hw_out].iter().copied().sum::<T>();
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        if g.is_depthwise() {
            self.depthwise_backward(x, dy, &mut dx, grad_w);
            return dx;
        }
        let cig = g.in_per_group();
        let cog = g.out_per_group();
        let (kh, kw) = g.kernel;
        let ckk = cig * kh * kw;
        let pointwise = g.is_pointwise();
        let mut col = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); ckk * hw_out]
        };
        let mut dcol = vec![T::zero(); ckk * hw_out];
        for b in 0..n {
            let xin = x.item(b);
            let d = dy.item(b);
            let dxb = dx.item_mut(b);
            for grp in 0..g.groups {
                let xg = &xin[grp * cig * h * w..(grp + 1) * cig * h * w];
                let dg = &d[grp * cog * hw_out..(grp + 1) * cog * hw_out];
                let wg = &self.weight.value[grp * cog * ckk..(grp + 1) * cog * ckk];
                if let Some(gw) = grad_w.as_deref_mut() {
                    let cols: &[T] = if pointwise {
                        xg
                    } else {
                        im2col(g, xg, h, w, ho, wo, &mut col);
                        &col
                    };
                    let gwg = &mut gw[grp * cog * ckk..(grp + 1) * cog * ckk];
                    T::gemm(cog, hw_out, ckk, T::one(), dg, false, cols, true, T::one(), gwg);
                }
                let dxg = &mut dxb[grp * cig * h * w..(grp + 1) * cig * h * w];
                if pointwise {
                    T::gemm(ckk, cog, hw_out, T::one(), wg, true, dg, false, T::one(), dxg);
                } else {
                    T::gemm(ckk, cog, hw_out, T::one(), wg, true, dg, false, T::zero(), &mut dcol);
                    col2im(g, &dcol, h, w, ho, wo, dxg);
                }
            }
        }
        dx
    }

    fn depthwise_backward(&self, x: &Tensor<T>, dy: &Tensor<T>, dx: &mut Tensor<T>, mut grad_w: Option<&mut [T]>) {
        let g = &self.geometry;
        let [n, c, h, w] = x.shape();
        let (ho, wo) = (dy.height(), dy.width());
        let (kh, kw) = g.kernel;
        let (ph, pw) = (g.padding.0 as isize, g.padding.1 as isize);
        let s = g.stride;
        for b in 0..n {
            for ch in 0..c {
                let plane = &x.item(b)[ch * h * w..(ch + 1) * h * w];
                let k = &self.weight.value[ch * kh * kw..(ch + 1) * kh * kw];
                let dplane = &dy.item(b)[ch * ho * wo..(ch + 1) * ho * wo];
                let dxp = &mut dx.item_mut(b)[ch * h * w..(ch + 1) * h * w];
                let mut gk = vec![T::zero(); kh * kw];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let dv = dplane[oy * wo + ox];
                        if dv == T::zero() {
                            continue;
                        }
                        for ky in 0..kh {
                            let iy = (oy * s + ky) as isize - ph;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * s + kx) as isize - pw;
                                if ix >= 0 && ix < w as isize {
                                    let idx = iy as usize * w + ix as usize;
                                    dxp[idx] += dv * k[ky * kw + kx];
                                    gk[ky * kw + kx] += dv * plane[idx];
                                }
                            }
                        }
                    }
                }
                if let Some(gw) = grad_w.as_deref_mut() {
                    for (acc, v) in gw[ch * kh * kw..(ch + 1) * kh * kw].iter_mut().zip(gk) {
                        *acc += v;
                    }
                }
            }
        }
    }
}
