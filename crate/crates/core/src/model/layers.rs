//! Convolution, pooling, activation and dense layers over channel-major
//! tensors, each with an explicit backward pass.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::Param;
use crate::rng::Rng;
use crate::tensor::{gemm, Tensor};

/// Bias-free 2-D convolution (always followed by normalization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out × (in·k·k)`, row-major.
    pub weight: Param,
}

/// The input of a training-mode convolution, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input: Tensor,
}

impl Conv2d {
    /// He-normal (fan-out) initialization.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_out = (out_channels * kernel * kernel) as f64;
        let std = libm::sqrt(2.0 / fan_out);
        let weight = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(weight),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |d: usize| (d + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    /// Output positions `lo..hi` along one axis whose input coordinate
    /// `o·stride + offset − padding` lies inside `0..len`.
    fn valid_range(&self, offset: usize, len: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if offset >= p { 0 } else { (p - offset).div_ceil(s) };
        let hi = if len + p > offset {
            (len + p - offset - 1) / s + 1
        } else {
            0
        };
        (lo.min(out), hi.min(out).max(lo.min(out)))
    }

    /// Unfolds sample `n` into `cols` (`K × Ho·Wo`). Entries that fall in
    /// the padding are never written, so `cols` must start zeroed and may
    /// be reused across samples of the same shape.
    fn im2col(&self, x: &Tensor, n: usize, cols: &mut [f64]) {
        let (ho, wo) = self.output_size(x.h, x.w);
        let np = ho * wo;
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for ci in 0..self.in_channels {
            let plane = x.plane(n, ci);
            for kh in 0..k {
                let (oh_lo, oh_hi) = self.valid_range(kh, x.h, ho);
                for kw in 0..k {
                    let (ow_lo, ow_hi) = self.valid_range(kw, x.w, wo);
                    let row = &mut cols[((ci * k + kh) * k + kw) * np..][..np];
                    let first = ow_lo * s + kw - p;
                    for oh in oh_lo..oh_hi {
                        let src = &plane[(oh * s + kh - p) * x.w + first..];
                        let dst = &mut row[oh * wo..][ow_lo..ow_hi];
                        if s == 1 {
                            dst.copy_from_slice(&src[..dst.len()]);
                        } else {
                            for (d, v) in dst.iter_mut().zip(src.iter().step_by(s)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds the folded `cols` of sample `n` into `dx`.
    fn col2im(&self, cols: &[f64], n: usize, dx: &mut Tensor) {
        let (h, w) = (dx.h, dx.w);
        let (ho, wo) = self.output_size(h, w);
        let np = ho * wo;
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for ci in 0..self.in_channels {
            let start = dx.offset(n, ci, 0, 0);
            let plane = &mut dx.data[start..][..h * w];
            for kh in 0..k {
                let (oh_lo, oh_hi) = self.valid_range(kh, h, ho);
                for kw in 0..k {
                    let (ow_lo, ow_hi) = self.valid_range(kw, w, wo);
                    let row = &cols[((ci * k + kh) * k + kw) * np..][..np];
                    let first = ow_lo * s + kw - p;
                    for oh in oh_lo..oh_hi {
                        let dst = &mut plane[(oh * s + kh - p) * w + first..];
                        let src = &row[oh * wo..][ow_lo..ow_hi];
                        for (d, v) in dst.iter_mut().step_by(s).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.c != self.in_channels {
            return Err(Error::Shape(alloc::format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.c
            )));
        }
        if x.h + 2 * self.padding < self.kernel || x.w + 2 * self.padding < self.kernel {
            return Err(Error::Shape(alloc::format!(
                "{}x{} input is smaller than the {}x{} kernel",
                x.h,
                x.w,
                self.kernel,
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let (ho, wo) = self.output_size(x.h, x.w);
        let np = ho * wo;
        let kk = self.patch_len();
        let mut y = Tensor::zeros(x.n, self.out_channels, ho, wo);
        let mut cols = vec![0.0; kk * np];
        let rsc = (x.n * np) as isize;
        for n in 0..x.n {
            self.im2col(x, n, &mut cols);
            gemm(
                self.out_channels,
                kk,
                np,
                1.0,
                &self.weight.value,
                (kk as isize, 1),
                &cols,
                (np as isize, 1),
                0.0,
                &mut y.data[n * np..],
                (rsc, 1),
            );
        }
        Ok(y)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let y = self.forward(x)?;
        Ok((y, ConvCache { input: x.clone() }))
    }

    /// Accumulates the weight gradient; returns the input gradient when
    /// `need_input_grad`.
    pub fn backward(&mut self, cache: &ConvCache, dy: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let x = &cache.input;
        let np = dy.h * dy.w;
        let kk = self.patch_len();
        let rsd = (dy.n * np) as isize;
        let mut cols = vec![0.0; kk * np];
        let mut dcols = vec![0.0; kk * np];
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        for n in 0..dy.n {
            self.im2col(x, n, &mut cols);
            gemm(
                self.out_channels,
                np,
                kk,
                1.0,
                &dy.data[n * np..],
                (rsd, 1),
                &cols,
                (1, np as isize),
                1.0,
                &mut self.weight.grad,
                (kk as isize, 1),
            );
            if let Some(dx) = &mut dx {
                gemm(
                    kk,
                    self.out_channels,
                    np,
                    1.0,
                    &self.weight.value,
                    (1, kk as isize),
                    &dy.data[n * np..],
                    (rsd, 1),
                    0.0,
                    &mut dcols,
                    (np as isize, 1),
                );
                self.col2im(&dcols, n, dx);
            }
        }
        dx
    }
}

pub fn relu_inplace(x: &mut Tensor) {
    for v in &mut x.data {
        *v = v.max(0.0);
    }
}

/// Zeroes `dy` wherever the ReLU output was not positive.
pub fn relu_backward(output: &Tensor, dy: &mut Tensor) {
    for (g, &o) in dy.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Max pooling with implicit `-∞` padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    /// Flat input offset of each output's maximum.
    argmax: Vec<usize>,
    input_shape: [usize; 4],
}

impl MaxPool {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |d: usize| (d + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, PoolCache) {
        let (ho, wo) = self.output_size(x.h, x.w);
        let mut y = Tensor::zeros(x.n, x.c, ho, wo);
        let mut argmax = vec![0usize; y.data.len()];
        let mut out = 0;
        for c in 0..x.c {
            for n in 0..x.n {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0;
                        for kh in 0..self.kernel {
                            let iy = (oh * self.stride + kh) as isize - self.padding as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for kw in 0..self.kernel {
                                let ix = (ow * self.stride + kw) as isize - self.padding as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let at = x.offset(n, c, iy as usize, ix as usize);
                                if x.data[at] > best {
                                    best = x.data[at];
                                    best_at = at;
                                }
                            }
                        }
                        y.data[out] = best;
                        argmax[out] = best_at;
                        out += 1;
                    }
                }
            }
        }
        (
            y,
            PoolCache {
                argmax,
                input_shape: x.shape(),
            },
        )
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = cache.input_shape;
        let mut dx = Tensor::zeros(n, c, h, w);
        for (g, &at) in dy.data.iter().zip(&cache.argmax) {
            dx.data[at] += g;
        }
        dx
    }
}

/// Per-sample channel means, `C × N` (channel-major like the input).
pub fn global_avg_pool(x: &Tensor) -> Vec<f64> {
    let hw = x.h * x.w;
    x.data
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect()
}

pub fn global_avg_pool_backward(d_features: &[f64], shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (plane, &g) in dx.data.chunks_mut(hw).zip(d_features) {
        plane.fill(g / hw as f64);
    }
    dx
}

/// Dense layer from `C` pooled features to the two class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `out × in`, row-major.
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Uniform `±1/√in` initialization of weights and bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / libm::sqrt(in_features as f64);
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-bound..bound)).collect() };
        let weight = draw(out_features * in_features);
        let bias = draw(out_features);
        Self {
            in_features,
            out_features,
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    /// `features` is `C × N`; returns `N × out`.
    pub fn forward(&self, features: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.out_features];
        for i in 0..n {
            for o in 0..self.out_features {
                let row = &self.weight.value[o * self.in_features..][..self.in_features];
                out[i * self.out_features + o] = self.bias.value[o]
                    + row
                        .iter()
                        .enumerate()
                        .map(|(c, w)| w * features[c * n + i])
                        .sum::<f64>();
            }
        }
        out
    }

    /// `d_out` is `N × out`; returns `d_features` as `C × N`.
    pub fn backward(&mut self, features: &[f64], n: usize, d_out: &[f64]) -> Vec<f64> {
        let mut d_features = vec![0.0; self.in_features * n];
        for i in 0..n {
            for o in 0..self.out_features {
                let g = d_out[i * self.out_features + o];
                self.bias.grad[o] += g;
                for c in 0..self.in_features {
                    self.weight.grad[o * self.in_features + c] += g * features[c * n + i];
                    d_features[c * n + i] += g * self.weight.value[o * self.in_features + c];
                }
            }
        }
        d_features
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Direct-summation convolution over NCHW indices.
    fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (ho, wo) = conv.output_size(x.h, x.w);
        let k = conv.kernel;
        let mut y = Tensor::zeros(x.n, conv.out_channels, ho, wo);
        for n in 0..x.n {
            for co in 0..conv.out_channels {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..conv.in_channels {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let iy = (oh * conv.stride + kh) as isize - conv.padding as isize;
                                    let ix = (ow * conv.stride + kw) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let wgt =
                                        conv.weight.value[((co * conv.in_channels + ci) * k + kh) * k + kw];
                                    acc += wgt * x.get(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        y.set(n, co, oh, ow, acc);
                    }
                }
            }
        }
        y
    }

    fn random(r: &mut Rng, shape: [usize; 4]) -> Tensor {
        let data = (0..shape.iter().product())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        Tensor::from_cnhw(shape[0], shape[1], shape[2], shape[3], data).unwrap()
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut r = rng::seeded(1);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3), (1, 1, 0)] {
            let conv = Conv2d::new(3, 4, k, s, p, &mut r);
            let x = random(&mut r, [2, 3, 9, 8]);
            let y = conv.forward(&x).unwrap();
            let expected = naive_conv(&conv, &x);
            assert_eq!(y.shape(), expected.shape());
            for (a, b) in y.data.iter().zip(&expected.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> and <conv_w(x), g> linear in w
        let mut r = rng::seeded(2);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, &mut r);
        let x = random(&mut r, [2, 2, 7, 6]);
        let (y, cache) = conv.forward_train(&x).unwrap();
        let g = random(&mut r, y.shape());
        conv.weight.zero_grad();
        let dx = conv.backward(&cache, &g, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let via_w: f64 = conv
            .weight
            .value
            .iter()
            .zip(&conv.weight.grad)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let pool = MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let x = Tensor::from_cnhw(1, 1, 4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let (y, cache) = pool.forward(&x);
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data, [5.0, 7.0, 13.0, 15.0]);
        let dx = pool.backward(&cache, &Tensor::from_cnhw(1, 1, 2, 2, vec![1.0; 4]).unwrap());
        assert_eq!(dx.data.iter().sum::<f64>(), 4.0);
        assert_eq!(dx.data[15], 1.0);
    }

    #[test]
    fn linear_shapes() {
        let mut r = rng::seeded(3);
        let mut lin = Linear::new(3, 2, &mut r);
        let feats = vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0]; // C=3, N=2
        let out = lin.forward(&feats, 2);
        assert_eq!(out.len(), 4);
        let expected0 = lin.bias.value[0] + lin.weight.value[0] + 0.5 * lin.weight.value[1];
        assert!((out[0] - expected0).abs() < 1e-15);
        let d = lin.backward(&feats, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(d[0], lin.weight.value[0]);
        assert_eq!(lin.bias.grad, [1.0, 0.0]);
    }
}
