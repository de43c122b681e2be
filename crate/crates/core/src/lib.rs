//! Dual-domain transfer learning for binary malignancy classification.
//!
//! The crate is `no_std` (with `alloc`) and holds the numerical core: the
//! conditional batch-norm layer, prior-guided distribution alignment,
//! cross-domain mixing, the convolutional classifiers, the training loop
//! and the evaluation metrics. File formats, the command-line tool and
//! anything touching the operating system live in the `dualshift` crate.
//!
//! Image tensors use a channel-major `C×N×H×W` memory layout throughout
//! (see [`Tensor`]), which keeps every normalization channel contiguous
//! and lets convolutions write their GEMM output in place.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cbn;
pub mod crossmix;
pub mod dalign;
pub mod dataset;
mod error;
pub mod metrics;
pub mod model;
pub mod param;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use cbn::{CbnState, DomainMlp, Mode};
pub use crossmix::{MixConfig, MixedSample, Pairing};
pub use dalign::{DomainPriors, EmaTracker};
pub use dataset::{Dataset, Domain, FoldSplit, PerDomain, Provenance, Sample, SyntheticConfig};
pub use error::{Error, Result};
pub use metrics::ScoredSet;
pub use model::{Classifier, ModelConfig, NormKind, Preset};
pub use tensor::Tensor;
pub use trainer::{ExperimentConfig, RunResult};
