//! Training loop, fold protocol and the ablation / sweep runners.

mod fold;
mod runs;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crossmix::MixConfig;
use crate::dalign::{logit_shift, DomainPriors, EmaTracker};
use crate::dataset::{AugmentConfig, Domain, SyntheticConfig};
use crate::error::{Error, Result};
use crate::metrics::aggregate;
use crate::model::{ModelConfig, NormKind};

pub use fold::{train_fold, FoldOutcome};
pub use runs::{
    ablation_label, baseline_mixed, baseline_nonmass, run_ablation, run_ablation_with, run_alpha_sweep,
    run_alpha_sweep_with, run_experiment, run_experiment_with, run_ratio_sweep, run_ratio_sweep_with,
    with_flags, Flags, Row, DEFAULT_ALPHAS, DEFAULT_RATIOS, TABLE2_GRID,
};

/// Version of the serialized [`RunResult`] layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Probability clamp applied before taking logs in the loss.
pub const PROB_CLAMP: f64 = 1e-7;

const DESK_LR: f64 = 3e-3;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    /// A CSV manifest (`id,path,label,domain`); loaded by the host tooling.
    Manifest {
        path: String,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticConfig::default())
    }
}

/// One experiment: model, module toggles, optimization recipe and data.
///
/// Defaults follow the published recipe (AdamW at 1e-4 for 150 epochs,
/// ×0.1 after epoch 100) with every module enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(rename = "crossmix")]
    pub mix: MixConfig,
    /// Overrides `model.norm`.
    pub cbn_enabled: bool,
    pub da_enabled: bool,
    pub crossmix_enabled: bool,
    /// `false` trains on non-mass samples only (the "Non-mass" baseline).
    pub use_mass: bool,
    pub mass_source: MassSource,
    pub lr: f64,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    /// First epoch (0-based) that runs at the decayed rate.
    pub lr_decay_epoch: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub folds: usize,
    pub seed: u64,
    pub nonmass_train_ratio: f64,
    pub da_momentum: f64,
    pub augment_enabled: bool,
    pub augment: AugmentConfig,
    pub dataset: DatasetSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            mix: MixConfig::default(),
            cbn_enabled: true,
            da_enabled: true,
            crossmix_enabled: true,
            use_mass: true,
            mass_source: MassSource::OutOfFold,
            lr: 1e-4,
            epochs: 150,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 100,
            weight_decay: 1e-2,
            batch_size: 32,
            folds: 5,
            seed: 0,
            nonmass_train_ratio: 1.0,
            da_momentum: EmaTracker::DEFAULT_MOMENTUM,
            augment_enabled: true,
            augment: AugmentConfig::default(),
            dataset: DatasetSource::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale schedule for the tiny model: 30 epochs at a higher
    /// learning rate, decayed for the last third.
    pub fn desk() -> Self {
        Self {
            lr: DESK_LR,
            epochs: 30,
            lr_decay_epoch: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        self.model.validate()?;
        self.mix.validate()?;
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.lr_decay_epoch >= self.epochs {
            return fail(alloc::format!(
                "lr_decay_epoch {} must be below epochs {}",
                self.lr_decay_epoch,
                self.epochs
            ));
        }
        if !(self.nonmass_train_ratio > 0.0 && self.nonmass_train_ratio <= 1.0) {
            return fail(alloc::format!(
                "nonmass_train_ratio {} outside (0, 1]",
                self.nonmass_train_ratio
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(alloc::format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail(alloc::format!(
                "lr_decay_factor {} outside (0, 1]",
                self.lr_decay_factor
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(alloc::format!("weight_decay {} is negative", self.weight_decay));
        }
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return fail(alloc::format!(
                "batch_size must be even and at least 4, got {}",
                self.batch_size
            ));
        }
        if self.folds < 2 {
            return fail(alloc::format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.da_momentum > 0.0 && self.da_momentum < 1.0) {
            return fail(alloc::format!("da_momentum {} outside (0, 1)", self.da_momentum));
        }
        if self.crossmix_enabled && !self.use_mass {
            return fail("crossmix needs mass samples (use_mass = false)".into());
        }
        Ok(())
    }

    /// The model configuration with the normalization set by `cbn_enabled`.
    pub fn model_config(&self) -> ModelConfig {
        self.model.with_norm(if self.cbn_enabled {
            NormKind::Cbn
        } else {
            NormKind::PlainBn
        })
    }

    /// Effective learning rate during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }
}

/// Which mass samples a fold trains on. Only non-mass samples are ever
/// evaluated, so both choices keep the test sets clean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassSource {
    /// Mass samples outside the fold's test split.
    #[default]
    OutOfFold,
    /// Every mass sample, in every fold.
    All,
}

/// Outcome of one k-fold experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Non-mass test AUC per fold.
    pub per_fold_auc: Vec<f64>,
    pub mean_auc: f64,
    /// Population standard deviation over folds.
    pub std_auc: f64,
    /// Mean training loss per epoch, one list per fold.
    pub loss_trace: Vec<Vec<f64>>,
    pub seed: u64,
    /// Filled in by the host; the core has no clock.
    pub wall_clock_s: f64,
    /// Malignancy priors of each fold's training split.
    pub priors: Vec<DomainPriors>,
}

impl RunResult {
    pub fn from_folds(config: &ExperimentConfig, folds: &[FoldOutcome]) -> Result<Self> {
        let per_fold_auc: Vec<f64> = folds.iter().map(|f| f.auc).collect();
        let (mean_auc, std_auc) = aggregate(&per_fold_auc)?;
        let mut config = config.clone();
        config.model = config.model_config();
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            seed: config.seed,
            config,
            per_fold_auc,
            mean_auc,
            std_auc,
            loss_trace: folds.iter().map(|f| f.loss_trace.clone()).collect(),
            wall_clock_s: 0.0,
            priors: folds.iter().map(|f| f.priors).collect(),
        })
    }

    /// Checks that the stored mean and std are exactly what the per-fold
    /// list produces.
    pub fn verify_summary(&self) -> Result<()> {
        let (mean, std) = aggregate(&self.per_fold_auc)?;
        if mean.to_bits() != self.mean_auc.to_bits() || std.to_bits() != self.std_auc.to_bits() {
            return Err(Error::InvalidArgument(alloc::format!(
                "stored mean/std {}/{} disagree with per-fold values ({mean}/{std})",
                self.mean_auc,
                self.std_auc
            )));
        }
        Ok(())
    }
}

/// Loss value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `∂loss/∂logits`, `N × 2`.
    pub d_logits: Vec<[f64; 2]>,
    /// The (aligned, unclamped) malignant probabilities the loss saw.
    pub probs: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of soft labels against the malignant
/// probability, optionally after distribution alignment.
///
/// Alignment is applied as the equivalent logit shift. The gradient treats
/// the probability clamp as the identity so saturated mistakes still
/// receive a learning signal.
pub fn loss(
    logits: &[[f64; 2]],
    soft_labels: &[f64],
    domains: &[Domain],
    priors: &DomainPriors,
    tracker: &EmaTracker,
    da_enabled: bool,
) -> Result<LossOutput> {
    let n = logits.len();
    if n == 0 || soft_labels.len() != n || domains.len() != n {
        return Err(Error::Shape(alloc::format!(
            "{} logits, {} labels, {} domains",
            n,
            soft_labels.len(),
            domains.len()
        )));
    }
    if logits.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    if let Some(y) = soft_labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::InvalidArgument(alloc::format!(
            "soft label {y} outside [0, 1]"
        )));
    }
    let shifts = if da_enabled {
        [
            logit_shift(Domain::Mass, priors, tracker),
            logit_shift(Domain::Nonmass, priors, tracker),
        ]
    } else {
        [0.0, 0.0]
    };
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut d_logits = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for ((l, &y), d) in logits.iter().zip(soft_labels).zip(domains) {
        let p = sigmoid(l[1] - l[0] + shifts[d.index()]);
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= y * libm::log(pc) + (1.0 - y) * libm::log(1.0 - pc);
        let g = (p - y) * scale;
        d_logits.push([-g, g]);
        probs.push(p);
    }
    Ok(LossOutput {
        value: total * scale,
        d_logits,
        probs,
    })
}
