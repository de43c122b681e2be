//! Binary malignancy classifiers whose normalization layers are all
//! conditional batch norm (or plain batch norm for ablations).
//!
//! Two presets exist: a ResNet-10 (stem + four single-block stages) for
//! full-size 224×224 inputs and a three-block CNN for 64×64 desk-scale
//! experiments.

mod layers;
mod optim;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cbn::{CbnContext, CbnState, Mode};
use crate::dataset::Domain;
use crate::error::{Error, Result};
use crate::param::Param;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub use layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_inplace, Conv2d, ConvCache, Linear,
    MaxPool, PoolCache,
};
pub use optim::AdamW;

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Resnet10,
    Tiny,
}

impl Preset {
    pub fn default_input_size(self) -> usize {
        match self {
            Preset::Resnet10 => 224,
            Preset::Tiny => 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Cbn,
    PlainBn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawModelConfig")]
pub struct ModelConfig {
    pub preset: Preset,
    pub input_size: usize,
    pub norm: NormKind,
    /// Hidden width of every conditioning MLP; `max(C, 8)` when unset.
    pub cbn_hidden: Option<usize>,
}

/// Config-file form: every key optional, input size defaulting per preset.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelConfig {
    #[serde(default = "default_preset")]
    preset: Preset,
    input_size: Option<usize>,
    #[serde(default = "default_norm")]
    norm: NormKind,
    cbn_hidden: Option<usize>,
}

fn default_preset() -> Preset {
    Preset::Tiny
}

fn default_norm() -> NormKind {
    NormKind::Cbn
}

impl TryFrom<RawModelConfig> for ModelConfig {
    type Error = Error;

    fn try_from(raw: RawModelConfig) -> Result<Self> {
        let config = Self {
            preset: raw.preset,
            input_size: raw.input_size.unwrap_or(raw.preset.default_input_size()),
            norm: raw.norm,
            cbn_hidden: raw.cbn_hidden,
        };
        config.validate()?;
        Ok(config)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 8 {
            return Err(Error::Config(alloc::format!(
                "model.input_size {} is too small",
                self.input_size
            )));
        }
        if self.cbn_hidden == Some(0) {
            return Err(Error::Config("model.cbn_hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn tiny() -> Self {
        Self {
            preset: Preset::Tiny,
            input_size: 64,
            norm: NormKind::Cbn,
            cbn_hidden: None,
        }
    }

    pub fn resnet10() -> Self {
        Self {
            preset: Preset::Resnet10,
            input_size: 224,
            norm: NormKind::Cbn,
            cbn_hidden: None,
        }
    }

    pub fn with_norm(self, norm: NormKind) -> Self {
        Self { norm, ..self }
    }
}

/// Convolution → normalization → ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: CbnState,
}

/// Two 3×3 convolutions with an identity or projected shortcut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub norm1: CbnState,
    pub conv2: Conv2d,
    pub norm2: CbnState,
    pub shortcut: Option<ConvBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stage {
    Conv(ConvBlock),
    MaxPool(MaxPool),
    Residual(BasicBlock),
}

#[derive(Debug)]
enum StageCache {
    Conv {
        conv: ConvCache,
        norm: CbnContext,
        out: Tensor,
    },
    MaxPool(PoolCache),
    Residual {
        conv1: ConvCache,
        norm1: CbnContext,
        act1: Tensor,
        conv2: ConvCache,
        norm2: CbnContext,
        shortcut: Option<(ConvCache, CbnContext)>,
        out: Tensor,
    },
}

/// Everything a training-mode forward pass retains for backward.
#[derive(Debug)]
pub struct Trace {
    stages: Vec<StageCache>,
    features: Vec<f64>,
    feature_shape: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub config: ModelConfig,
    pub stages: Vec<Stage>,
    pub head: Linear,
}

struct Builder<'a> {
    config: &'a ModelConfig,
    weights: Rng,
    mlps: Rng,
}

impl Builder<'_> {
    fn norm(&mut self, channels: usize) -> CbnState {
        match self.config.norm {
            NormKind::Cbn => CbnState::new(channels, self.config.cbn_hidden, &mut self.mlps),
            NormKind::PlainBn => CbnState::plain(channels),
        }
    }

    fn conv_block(&mut self, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> ConvBlock {
        ConvBlock {
            conv: Conv2d::new(cin, cout, k, stride, pad, &mut self.weights),
            norm: self.norm(cout),
        }
    }

    fn basic(&mut self, cin: usize, cout: usize, stride: usize) -> BasicBlock {
        let conv1 = Conv2d::new(cin, cout, 3, stride, 1, &mut self.weights);
        let norm1 = self.norm(cout);
        let conv2 = Conv2d::new(cout, cout, 3, 1, 1, &mut self.weights);
        let norm2 = self.norm(cout);
        let shortcut = (stride != 1 || cin != cout).then(|| self.conv_block(cin, cout, 1, stride, 0));
        BasicBlock {
            conv1,
            norm1,
            conv2,
            norm2,
            shortcut,
        }
    }
}

impl Classifier {
    /// Deterministic in `seed`. Convolution and head weights come from one
    /// stream and the conditioning MLPs from another, so CBN and plain-BN
    /// builds with the same seed share every common parameter.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            config: &config,
            weights: rng::stream(seed, &[rng::tag::INIT]),
            mlps: rng::stream(seed, &[rng::tag::CBN_INIT]),
        };
        let (stages, width) = match config.preset {
            Preset::Tiny => (
                vec![
                    Stage::Conv(b.conv_block(1, 16, 3, 2, 1)),
                    Stage::Conv(b.conv_block(16, 32, 3, 2, 1)),
                    Stage::Conv(b.conv_block(32, 64, 3, 2, 1)),
                ],
                64,
            ),
            Preset::Resnet10 => (
                vec![
                    Stage::Conv(b.conv_block(1, 64, 7, 2, 3)),
                    Stage::MaxPool(MaxPool {
                        kernel: 3,
                        stride: 2,
                        padding: 1,
                    }),
                    Stage::Residual(b.basic(64, 64, 1)),
                    Stage::Residual(b.basic(64, 128, 2)),
                    Stage::Residual(b.basic(128, 256, 2)),
                    Stage::Residual(b.basic(256, 512, 2)),
                ],
                512,
            ),
        };
        let head = Linear::new(width, NUM_CLASSES, &mut b.weights);
        Ok(Self { config, stages, head })
    }

    pub fn is_conditional(&self) -> bool {
        self.config.norm == NormKind::Cbn
    }

    pub fn norms(&self) -> Vec<&CbnState> {
        let mut out = Vec::new();
        for stage in &self.stages {
            match stage {
                Stage::Conv(b) => out.push(&b.norm),
                Stage::MaxPool(_) => {}
                Stage::Residual(b) => {
                    out.push(&b.norm1);
                    out.push(&b.norm2);
                    if let Some(s) = &b.shortcut {
                        out.push(&s.norm);
                    }
                }
            }
        }
        out
    }

    pub fn norms_mut(&mut self) -> Vec<&mut CbnState> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            match stage {
                Stage::Conv(b) => out.push(&mut b.norm),
                Stage::MaxPool(_) => {}
                Stage::Residual(b) => {
                    out.push(&mut b.norm1);
                    out.push(&mut b.norm2);
                    if let Some(s) = &mut b.shortcut {
                        out.push(&mut s.norm);
                    }
                }
            }
        }
        out
    }

    /// Every trainable parameter in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            match stage {
                Stage::Conv(b) => {
                    out.push(&mut b.conv.weight);
                    out.extend(b.norm.params_mut());
                }
                Stage::MaxPool(_) => {}
                Stage::Residual(b) => {
                    out.push(&mut b.conv1.weight);
                    out.extend(b.norm1.params_mut());
                    out.push(&mut b.conv2.weight);
                    out.extend(b.norm2.params_mut());
                    if let Some(s) = &mut b.shortcut {
                        out.push(&mut s.conv.weight);
                        out.extend(s.norm.params_mut());
                    }
                }
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn embeddings(&self, images: &Tensor, domains: &[Domain]) -> Result<Vec<[f64; 2]>> {
        let s = self.config.input_size;
        if images.c != 1 || images.h != s || images.w != s {
            return Err(Error::Shape(alloc::format!(
                "expected N×1×{s}×{s} images, got {:?}",
                images.shape()
            )));
        }
        if domains.is_empty() && !self.is_conditional() {
            return Ok(vec![Domain::Mass.embedding(); images.n]);
        }
        if domains.len() != images.n {
            return Err(Error::Shape(alloc::format!(
                "{} domain tags for {} images",
                domains.len(),
                images.n
            )));
        }
        Ok(domains.iter().map(|d| d.embedding()).collect())
    }

    /// Logits, `N × 2` as `[benign, malignant]`.
    pub fn forward(&mut self, images: &Tensor, domains: &[Domain], mode: Mode) -> Result<Vec<[f64; 2]>> {
        match mode {
            Mode::Train => self.forward_train(images, domains).map(|(l, _)| l),
            Mode::Eval => self.forward_eval(images, domains),
        }
    }

    /// Read-only inference with running normalization statistics.
    pub fn forward_eval(&self, images: &Tensor, domains: &[Domain]) -> Result<Vec<[f64; 2]>> {
        let e = self.embeddings(images, domains)?;
        let mut x = images.clone();
        for stage in &self.stages {
            x = match stage {
                Stage::Conv(b) => {
                    let mut y = b.norm.forward_eval(&b.conv.forward(&x)?, &e)?;
                    relu_inplace(&mut y);
                    y
                }
                Stage::MaxPool(p) => p.forward(&x).0,
                Stage::Residual(b) => {
                    let mut h = b.norm1.forward_eval(&b.conv1.forward(&x)?, &e)?;
                    relu_inplace(&mut h);
                    let mut out = b.norm2.forward_eval(&b.conv2.forward(&h)?, &e)?;
                    let short = match &b.shortcut {
                        Some(s) => s.norm.forward_eval(&s.conv.forward(&x)?, &e)?,
                        None => x,
                    };
                    for (o, s) in out.data.iter_mut().zip(&short.data) {
                        *o += s;
                    }
                    relu_inplace(&mut out);
                    out
                }
            };
        }
        let logits = self.head.forward(&global_avg_pool(&x), x.n);
        to_pairs(logits)
    }

    /// Training-mode forward: batch statistics, running-stat updates, and
    /// a trace for [`Classifier::backward`].
    pub fn forward_train(&mut self, images: &Tensor, domains: &[Domain]) -> Result<(Vec<[f64; 2]>, Trace)> {
        let e = self.embeddings(images, domains)?;
        let mut x = images.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &mut self.stages {
            let (next, cache) = match stage {
                Stage::Conv(b) => {
                    let (h, conv) = b.conv.forward_train(&x)?;
                    let (mut y, norm) = b.norm.forward_train(&h, &e)?;
                    relu_inplace(&mut y);
                    (y.clone(), StageCache::Conv { conv, norm, out: y })
                }
                Stage::MaxPool(p) => {
                    let (y, c) = p.forward(&x);
                    (y, StageCache::MaxPool(c))
                }
                Stage::Residual(b) => {
                    let (h, conv1) = b.conv1.forward_train(&x)?;
                    let (mut act1, norm1) = b.norm1.forward_train(&h, &e)?;
                    relu_inplace(&mut act1);
                    let (h2, conv2) = b.conv2.forward_train(&act1)?;
                    let (mut out, norm2) = b.norm2.forward_train(&h2, &e)?;
                    let (short, shortcut) = match &mut b.shortcut {
                        Some(s) => {
                            let (hs, cc) = s.conv.forward_train(&x)?;
                            let (ys, nc) = s.norm.forward_train(&hs, &e)?;
                            (ys, Some((cc, nc)))
                        }
                        None => (x, None),
                    };
                    for (o, s) in out.data.iter_mut().zip(&short.data) {
                        *o += s;
                    }
                    relu_inplace(&mut out);
                    (
                        out.clone(),
                        StageCache::Residual {
                            conv1,
                            norm1,
                            act1,
                            conv2,
                            norm2,
                            shortcut,
                            out,
                        },
                    )
                }
            };
            caches.push(cache);
            x = next;
        }
        let features = global_avg_pool(&x);
        let logits = self.head.forward(&features, x.n);
        Ok((
            to_pairs(logits)?,
            Trace {
                stages: caches,
                features,
                feature_shape: x.shape(),
            },
        ))
    }

    /// Accumulates parameter gradients for upstream logit gradients.
    pub fn backward(&mut self, trace: &Trace, d_logits: &[[f64; 2]]) -> Result<()> {
        let n = trace.feature_shape[0];
        if d_logits.len() != n {
            return Err(Error::Shape(alloc::format!(
                "{} logit gradients for a batch of {n}",
                d_logits.len()
            )));
        }
        let flat: Vec<f64> = d_logits.iter().flatten().copied().collect();
        let d_features = self.head.backward(&trace.features, n, &flat);
        let mut grad = global_avg_pool_backward(&d_features, trace.feature_shape);
        for (index, (stage, cache)) in self.stages.iter_mut().zip(&trace.stages).enumerate().rev() {
            let need_input = index > 0;
            grad = match (stage, cache) {
                (Stage::Conv(b), StageCache::Conv { conv, norm, out }) => {
                    relu_backward(out, &mut grad);
                    let dh = b.norm.backward(Some(norm), &grad)?;
                    match b.conv.backward(conv, &dh, need_input) {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Stage::MaxPool(p), StageCache::MaxPool(c)) => p.backward(c, &grad),
                (
                    Stage::Residual(b),
                    StageCache::Residual {
                        conv1,
                        norm1,
                        act1,
                        conv2,
                        norm2,
                        shortcut,
                        out,
                    },
                ) => {
                    relu_backward(out, &mut grad);
                    let dh2 = b.norm2.backward(Some(norm2), &grad)?;
                    let mut d_act1 = b.conv2.backward(conv2, &dh2, true).expect("input grad requested");
                    relu_backward(act1, &mut d_act1);
                    let dh1 = b.norm1.backward(Some(norm1), &d_act1)?;
                    let dx1 = b.conv1.backward(conv1, &dh1, need_input);
                    let dx2 = match (&mut b.shortcut, shortcut) {
                        (Some(s), Some((cc, nc))) => {
                            let dhs = s.norm.backward(Some(nc), &grad)?;
                            s.conv.backward(cc, &dhs, need_input)
                        }
                        _ => need_input.then_some(grad),
                    };
                    match (dx1, dx2) {
                        (Some(mut a), Some(b)) => {
                            for (x, y) in a.data.iter_mut().zip(&b.data) {
                                *x += y;
                            }
                            a
                        }
                        _ => break,
                    }
                }
                _ => return Err(Error::MissingContext),
            };
        }
        Ok(())
    }

    /// Malignant-class softmax probability per image (inference mode).
    pub fn predict_malignancy(&self, images: &Tensor, domains: &[Domain]) -> Result<Vec<f64>> {
        Ok(self
            .forward_eval(images, domains)?
            .iter()
            .map(|&l| malignant_probability(l))
            .collect())
    }
}

fn to_pairs(flat: Vec<f64>) -> Result<Vec<[f64; 2]>> {
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// `softmax(logits)[1]`, evaluated without overflow.
pub fn malignant_probability(logits: [f64; 2]) -> f64 {
    let d = logits[1] - logits[0];
    if d >= 0.0 {
        1.0 / (1.0 + libm::exp(-d))
    } else {
        let e = libm::exp(d);
        e / (1.0 + e)
    }
}

/// Stacks equally sized grayscale images into an `N×1×S×S` tensor.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a crate::dataset::Image>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for img in images {
        match dims {
            None => dims = Some((img.height, img.width)),
            Some(d) if d != (img.height, img.width) => {
                return Err(Error::Shape(alloc::format!(
                    "cannot stack {}x{} with {}x{}",
                    img.height,
                    img.width,
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        data.extend_from_slice(&img.pixels);
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::Shape("no images to stack".into()))?;
    Tensor::from_cnhw(n, 1, h, w, data)
}
