//! Conditional batch normalization.
//!
//! Batch statistics are pooled over the whole batch, whatever the domain
//! mix. Each sample's scale and bias are then shifted by residuals that a
//! small MLP predicts from the sample's one-hot domain embedding:
//! `γ̂ = γ + Δγ(e)`, `β̂ = β + Δβ(e)`. The MLP's output layer starts at
//! zero, so a fresh layer is plain batch normalization.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::Param;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub const EMBEDDING_DIM: usize = 2;
pub const MIN_HIDDEN: usize = 8;

/// One-hidden-layer ReLU network mapping a domain embedding to
/// `(Δβ, Δγ)`, concatenated as a `2C` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMlp {
    pub hidden: usize,
    pub outputs: usize,
    /// `hidden × 2`, row-major.
    pub w1: Param,
    pub b1: Param,
    /// `2C × hidden`, row-major.
    pub w2: Param,
    pub b2: Param,
}

impl DomainMlp {
    /// He-normal first layer, zero output layer.
    pub fn new(num_features: usize, hidden: usize, rng: &mut Rng) -> Self {
        let std = libm::sqrt(2.0 / EMBEDDING_DIM as f64);
        let w1 = (0..hidden * EMBEDDING_DIM)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Self {
            hidden,
            outputs: 2 * num_features,
            w1: Param::new(w1),
            b1: Param::zeros(hidden),
            w2: Param::zeros(2 * num_features * hidden),
            b2: Param::zeros(2 * num_features),
        }
    }

    /// Returns `(output, hidden pre-activation)`.
    fn eval(&self, e: &[f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| self.b1.value[j] + self.w1.value[2 * j] * e[0] + self.w1.value[2 * j + 1] * e[1])
            .collect();
        let out = (0..self.outputs)
            .map(|o| {
                let row = &self.w2.value[o * self.hidden..][..self.hidden];
                self.b2.value[o] + row.iter().zip(&pre).map(|(w, p)| w * p.max(0.0)).sum::<f64>()
            })
            .collect();
        (out, pre)
    }

    /// Accumulates gradients for one sample given `d_out` (length `2C`).
    fn backward(&mut self, e: &[f64; 2], pre: &[f64], d_out: &[f64]) {
        let h = self.hidden;
        let mut d_hidden = vec![0.0; h];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.b2.grad[o] += g;
            let w_row = &self.w2.value[o * h..][..h];
            let g_row = &mut self.w2.grad[o * h..][..h];
            for j in 0..h {
                let act = pre[j].max(0.0);
                g_row[j] += g * act;
                d_hidden[j] += g * w_row[j];
            }
        }
        for j in 0..h {
            if pre[j] <= 0.0 {
                continue;
            }
            let g = d_hidden[j];
            self.b1.grad[j] += g;
            self.w1.grad[2 * j] += g * e[0];
            self.w1.grad[2 * j + 1] += g * e[1];
        }
    }

    pub fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn params(&self) -> [&Param; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

/// Normalization state for one layer. `mlp = None` is plain batch norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbnState {
    pub num_features: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub mlp: Option<DomainMlp>,
}

/// Values retained by a training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct CbnContext {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    /// `N × C`
    gamma_hat: Vec<f64>,
    embeddings: Vec<[f64; 2]>,
    /// Per-sample hidden pre-activations of the MLP.
    mlp_pre: Vec<Vec<f64>>,
}

impl CbnState {
    /// Conditional layer with hidden width `max(C, 8)` unless overridden.
    pub fn new(num_features: usize, hidden: Option<usize>, rng: &mut Rng) -> Self {
        let hidden = hidden.unwrap_or(num_features.max(MIN_HIDDEN));
        let mut state = Self::plain(num_features);
        state.mlp = Some(DomainMlp::new(num_features, hidden, rng));
        state
    }

    /// Unconditioned batch norm: `γ = 1`, `β = 0`.
    pub fn plain(num_features: usize) -> Self {
        Self {
            num_features,
            gamma: Param::new(vec![1.0; num_features]),
            beta: Param::zeros(num_features),
            running_mean: vec![0.0; num_features],
            running_var: vec![1.0; num_features],
            eps: 1e-5,
            momentum: 0.1,
            mlp: None,
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.mlp.is_some()
    }

    /// `(Δβ, Δγ)` for embedding `e`; zeros for a plain layer.
    pub fn mlp_delta(&self, e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let e: &[f64; 2] = e.try_into().map_err(|_| Error::EmbeddingDim(e.len()))?;
        let c = self.num_features;
        match &self.mlp {
            None => Ok((vec![0.0; c], vec![0.0; c])),
            Some(mlp) => {
                let (mut out, _) = mlp.eval(e);
                let delta_gamma = out.split_off(c);
                Ok((out, delta_gamma))
            }
        }
    }

    /// Per-sample `(γ̂, β̂)` rows (`N × C` each) plus MLP pre-activations.
    fn modulated(&self, embeddings: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let c = self.num_features;
        let mut gamma_hat = Vec::with_capacity(embeddings.len() * c);
        let mut beta_hat = Vec::with_capacity(embeddings.len() * c);
        let mut pres = Vec::new();
        for e in embeddings {
            match &self.mlp {
                None => {
                    gamma_hat.extend_from_slice(&self.gamma.value);
                    beta_hat.extend_from_slice(&self.beta.value);
                }
                Some(mlp) => {
                    let (out, pre) = mlp.eval(e);
                    let (d_beta, d_gamma) = out.split_at(c);
                    gamma_hat.extend(self.gamma.value.iter().zip(d_gamma).map(|(g, d)| g + d));
                    beta_hat.extend(self.beta.value.iter().zip(d_beta).map(|(b, d)| b + d));
                    pres.push(pre);
                }
            }
        }
        (gamma_hat, beta_hat, pres)
    }

    fn check_input(&self, x: &Tensor, embeddings: &[[f64; 2]]) -> Result<()> {
        if x.c != self.num_features {
            return Err(Error::Shape(alloc::format!(
                "input has {} channels, layer expects {}",
                x.c,
                self.num_features
            )));
        }
        if embeddings.len() != x.n {
            return Err(Error::Shape(alloc::format!(
                "{} embeddings for a batch of {}",
                embeddings.len(),
                x.n
            )));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("normalization input"));
        }
        Ok(())
    }

    /// Dispatches on `mode`; only training mode returns a context.
    pub fn forward(
        &mut self,
        x: &Tensor,
        embeddings: &[[f64; 2]],
        mode: Mode,
    ) -> Result<(Tensor, Option<CbnContext>)> {
        match mode {
            Mode::Train => self.forward_train(x, embeddings).map(|(y, ctx)| (y, Some(ctx))),
            Mode::Eval => self.forward_eval(x, embeddings).map(|y| (y, None)),
        }
    }

    /// Normalizes with batch statistics and updates the running averages.
    pub fn forward_train(&mut self, x: &Tensor, embeddings: &[[f64; 2]]) -> Result<(Tensor, CbnContext)> {
        self.check_input(x, embeddings)?;
        if x.n < 2 {
            return Err(Error::BatchTooSmall(x.n));
        }
        let (n, c, hw) = (x.n, x.c, x.h * x.w);
        let m = (n * hw) as f64;
        let (gamma_hat, beta_hat, mlp_pre) = self.modulated(embeddings);
        let mut x_hat = Tensor::zeros(n, c, x.h, x.w);
        let mut y = Tensor::zeros(n, c, x.h, x.w);
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let xs = x.channel(ch);
            let mean = xs.iter().sum::<f64>() / m;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv = 1.0 / libm::sqrt(var + self.eps);
            inv_std[ch] = inv;
            let xh = x_hat.channel_mut(ch);
            let ys = y.channel_mut(ch);
            for i in 0..n {
                let g = gamma_hat[i * c + ch];
                let b = beta_hat[i * c + ch];
                let rows = ys[i * hw..][..hw]
                    .iter_mut()
                    .zip(&mut xh[i * hw..][..hw])
                    .zip(&xs[i * hw..][..hw]);
                for ((o, h), v) in rows {
                    *h = (v - mean) * inv;
                    *o = g * *h + b;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
            self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
        }
        Ok((
            y,
            CbnContext {
                x_hat,
                inv_std,
                gamma_hat,
                embeddings: embeddings.to_vec(),
                mlp_pre,
            },
        ))
    }

    /// Normalizes with the running statistics. Leaves the state untouched.
    pub fn forward_eval(&self, x: &Tensor, embeddings: &[[f64; 2]]) -> Result<Tensor> {
        self.check_input(x, embeddings)?;
        let (n, c, hw) = (x.n, x.c, x.h * x.w);
        let (gamma_hat, beta_hat, _) = self.modulated(embeddings);
        let mut y = Tensor::zeros(n, c, x.h, x.w);
        for ch in 0..c {
            let mean = self.running_mean[ch];
            let inv = 1.0 / libm::sqrt(self.running_var[ch] + self.eps);
            let xs = x.channel(ch);
            let ys = y.channel_mut(ch);
            for i in 0..n {
                let g = gamma_hat[i * c + ch];
                let b = beta_hat[i * c + ch];
                for (o, v) in ys[i * hw..][..hw].iter_mut().zip(&xs[i * hw..][..hw]) {
                    *o = g * (v - mean) * inv + b;
                }
            }
        }
        Ok(y)
    }

    /// Backpropagates `dy` through a training-mode forward pass.
    ///
    /// Parameter gradients (γ, β and the MLP) are accumulated into the
    /// layer's `grad` buffers; the input gradient is returned. Batch mean
    /// and variance are differentiated as functions of the input.
    pub fn backward(&mut self, ctx: Option<&CbnContext>, dy: &Tensor) -> Result<Tensor> {
        let ctx = ctx.ok_or(Error::MissingContext)?;
        if dy.shape() != ctx.x_hat.shape() {
            return Err(Error::Shape(alloc::format!(
                "upstream gradient {:?} does not match forward output {:?}",
                dy.shape(),
                ctx.x_hat.shape()
            )));
        }
        let (n, c, hw) = (dy.n, dy.c, dy.h * dy.w);
        let m = (n * hw) as f64;
        // d(γ̂), d(β̂) per sample, `N × C`
        let mut d_gamma_hat = vec![0.0; n * c];
        let mut d_beta_hat = vec![0.0; n * c];
        let mut dx = Tensor::zeros(n, c, dy.h, dy.w);
        for ch in 0..c {
            let xh = ctx.x_hat.channel(ch);
            let g = dy.channel(ch);
            let mut sum_dxh = 0.0;
            let mut sum_dxh_xh = 0.0;
            for i in 0..n {
                let gs = &g[i * hw..][..hw];
                let xs = &xh[i * hw..][..hw];
                let (mut s_g, mut s_gx) = (0.0, 0.0);
                for (a, b) in gs.iter().zip(xs) {
                    s_g += a;
                    s_gx += a * b;
                }
                d_beta_hat[i * c + ch] = s_g;
                d_gamma_hat[i * c + ch] = s_gx;
                let gh = ctx.gamma_hat[i * c + ch];
                sum_dxh += gh * s_g;
                sum_dxh_xh += gh * s_gx;
            }
            self.gamma.grad[ch] += (0..n).map(|i| d_gamma_hat[i * c + ch]).sum::<f64>();
            self.beta.grad[ch] += (0..n).map(|i| d_beta_hat[i * c + ch]).sum::<f64>();
            let scale = ctx.inv_std[ch] / m;
            let out = dx.channel_mut(ch);
            for i in 0..n {
                let gh = ctx.gamma_hat[i * c + ch];
                let rows = out[i * hw..][..hw]
                    .iter_mut()
                    .zip(&g[i * hw..][..hw])
                    .zip(&xh[i * hw..][..hw]);
                for ((o, a), b) in rows {
                    *o = scale * (m * gh * a - sum_dxh - b * sum_dxh_xh);
                }
            }
        }
        if let Some(mlp) = &mut self.mlp {
            let mut d_out = vec![0.0; 2 * c];
            for i in 0..n {
                d_out[..c].copy_from_slice(&d_beta_hat[i * c..][..c]);
                d_out[c..].copy_from_slice(&d_gamma_hat[i * c..][..c]);
                mlp.backward(&ctx.embeddings[i], &ctx.mlp_pre[i], &d_out);
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.gamma, &mut self.beta];
        if let Some(mlp) = &mut self.mlp {
            out.extend(mlp.params_mut());
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.gamma, &self.beta];
        if let Some(mlp) = &self.mlp {
            out.extend(mlp.params());
        }
        out
    }
}
