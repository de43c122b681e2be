use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{loss, ExperimentConfig, MassSource};
use crate::crossmix::{pair_batch_with, MassPool, MixItem};
use crate::dalign::{domain_means, DomainPriors, EmaTracker};
use crate::dataset::{
    augment_with, resize_bilinear, subsample_stratified, Dataset, Domain, FoldSplit, Image, PerDomain, Sample,
};
use crate::error::{Error, Result};
use crate::metrics::{auc, ScoredSet};
use crate::model::{stack_images, AdamW, Classifier};
use crate::rng::{self, tag, Rng};

/// Everything one fold's training produces.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold_index: usize,
    /// Non-mass test AUC from raw inference-mode scores.
    pub auc: f64,
    pub test_scores: Vec<f64>,
    pub test_labels: Vec<u8>,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub priors: DomainPriors,
    pub tracker: EmaTracker,
    /// Per-step mean prediction of the pure (unmixed) samples of each
    /// domain, in update order.
    pub batch_means: Vec<PerDomain<Option<f64>>>,
    pub model: Classifier,
}

const EVAL_CHUNK: usize = 64;

fn label_counts(ds: &Dataset, positions: &[usize]) -> [usize; 2] {
    let mut counts = [0, 0];
    for &p in positions {
        counts[usize::from(ds.samples[p].label.min(1))] += 1;
    }
    counts
}

fn require_both_labels(ds: &Dataset, positions: &[usize], domain: Domain) -> Result<()> {
    let counts = label_counts(ds, positions);
    for label in 0..2u8 {
        if counts[usize::from(label)] == 0 {
            return Err(Error::StratumTooSmall {
                domain,
                label,
                count: 0,
                needed: 1,
            });
        }
    }
    Ok(())
}

fn rate(ds: &Dataset, positions: &[usize]) -> f64 {
    label_counts(ds, positions)[1] as f64 / positions.len() as f64
}

/// Splits `n` items into `parts` contiguous chunk sizes differing by at
/// most one.
fn chunk_sizes(n: usize, parts: usize) -> impl Iterator<Item = usize> {
    (0..parts).map(move |i| n / parts + usize::from(i < n % parts))
}

/// Endless reshuffled passes over a list of positions.
struct Cycle {
    order: Vec<usize>,
    at: usize,
}

impl Cycle {
    fn new(order: Vec<usize>) -> Self {
        let at = order.len();
        Self { order, at }
    }

    fn take(&mut self, count: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count && !self.order.is_empty() {
            if self.at == self.order.len() {
                self.order.shuffle(rng);
                self.at = 0;
            }
            out.push(self.order[self.at]);
            self.at += 1;
        }
        out
    }
}

fn prepare(sample: &Sample, config: &ExperimentConfig, rng: &mut Rng) -> Sample {
    let size = config.model.input_size;
    if config.augment_enabled {
        augment_with(sample, rng, size, &config.augment)
    } else {
        Sample {
            image: resize_bilinear(&sample.image, size, size),
            ..sample.clone()
        }
    }
}

/// Trains one model on a fold's training split and scores its non-mass
/// test samples.
///
/// Each step draws half a batch of non-mass samples and half a batch of
/// mass samples, both cycled through reshuffled passes, augments them, and,
/// with CrossMix on, replaces non-mass samples by blends with mass
/// partners. Alignment trackers are updated from the pure samples' mean
/// predictions before the loss is evaluated.
pub fn train_fold(dataset: &Dataset, fold: &FoldSplit, config: &ExperimentConfig) -> Result<FoldOutcome> {
    config.validate()?;
    let k = fold.fold_index as u64;
    let seed = config.seed;
    let train = dataset.positions(&fold.train_ids)?;
    let test = dataset.positions(&fold.test_ids)?;
    let of = |set: &[usize], d: Domain| -> Vec<usize> {
        set.iter()
            .copied()
            .filter(|&p| dataset.samples[p].domain == d)
            .collect()
    };

    let nonmass_all = of(&train, Domain::Nonmass);
    require_both_labels(dataset, &nonmass_all, Domain::Nonmass)?;
    let nonmass = subsample_stratified(
        dataset,
        &nonmass_all,
        config.nonmass_train_ratio,
        rng::derive_seed(seed, &[k]),
    )?;
    let mass = if config.use_mass {
        let m = match config.mass_source {
            MassSource::OutOfFold => of(&train, Domain::Mass),
            MassSource::All => (0..dataset.len())
                .filter(|&p| dataset.samples[p].domain == Domain::Mass)
                .collect(),
        };
        require_both_labels(dataset, &m, Domain::Mass)?;
        m
    } else {
        Vec::new()
    };
    let test_nonmass = of(&test, Domain::Nonmass);

    let q_nonmass = rate(dataset, &nonmass);
    let q_mass = if mass.is_empty() {
        q_nonmass
    } else {
        rate(dataset, &mass)
    };
    let priors = DomainPriors::new(q_mass, q_nonmass)?;
    let mut tracker = EmaTracker::new(&priors, config.da_momentum)?;

    let mut model = Classifier::build(config.model_config(), rng::derive_seed(seed, &[k]))?;
    let mut optimizer = AdamW::new(config.lr, config.weight_decay);
    let mut shuffle_rng = rng::stream(seed, &[tag::SHUFFLE, k]);
    let mut augment_rng = rng::stream(seed, &[tag::AUGMENT, k]);
    let mut mix_rng = rng::stream(seed, &[tag::MIX, k]);

    let pool = MassPool::new(mass.iter().map(|&p| &dataset.samples[p]))?;
    let half = config.batch_size / 2;
    // An epoch is one pass over the whole non-mass training split, so a
    // subsampled split gets the same number of steps, just fewer samples.
    let steps = nonmass_all.len().div_ceil(half);
    let mut nonmass_cycle = Cycle::new(nonmass.clone());
    let mut mass_cycle = Cycle::new(mass.clone());

    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut batch_means = Vec::new();
    for epoch in 0..config.epochs {
        optimizer.lr = config.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for size in chunk_sizes(nonmass_all.len(), steps) {
            let chunk = nonmass_cycle.take(size, &mut shuffle_rng);
            let mass_chunk = mass_cycle.take(half, &mut shuffle_rng);

            let nonmass_batch: Vec<Sample> = chunk
                .iter()
                .map(|&p| prepare(&dataset.samples[p], config, &mut augment_rng))
                .collect();
            let mut items = if config.crossmix_enabled {
                pair_batch_with(&nonmass_batch, &pool, &config.mix, &mut mix_rng, |s, r| {
                    prepare(s, config, r)
                })?
            } else {
                nonmass_batch.into_iter().map(MixItem::Original).collect()
            };
            items.extend(
                mass_chunk
                    .iter()
                    .map(|&p| MixItem::Original(prepare(&dataset.samples[p], config, &mut augment_rng))),
            );

            let images = stack_images(items.iter().map(MixItem::image))?;
            let domains: Vec<Domain> = items.iter().map(MixItem::domain).collect();
            let labels: Vec<f64> = items.iter().map(MixItem::soft_label).collect();

            let (logits, trace) = model.forward_train(&images, &domains)?;
            let p_hat: Vec<f64> = logits
                .iter()
                .map(|&l| crate::model::malignant_probability(l))
                .collect();
            let means = domain_means(&p_hat, &domains, |i| !items[i].is_mixed());
            if config.da_enabled {
                for d in Domain::ALL {
                    if let Some(m) = *means.get(d) {
                        tracker.update(m, d)?;
                    }
                }
            }
            batch_means.push(means);

            let out = loss(&logits, &labels, &domains, &priors, &tracker, config.da_enabled).map_err(
                |e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch },
                    other => other,
                },
            )?;
            if !out.value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += out.value;
            model.zero_grad();
            model.backward(&trace, &out.d_logits)?;
            optimizer.step(&mut model.params_mut());
        }
        loss_trace.push(epoch_loss / steps as f64);
    }

    let (test_scores, test_labels) = score(&model, dataset, &test_nonmass)?;
    let auc = auc(&ScoredSet::new(test_scores.clone(), test_labels.clone())?);
    Ok(FoldOutcome {
        fold_index: fold.fold_index,
        auc,
        test_scores,
        test_labels,
        loss_trace,
        priors,
        tracker,
        batch_means,
        model,
    })
}

/// Raw inference-mode malignancy scores of the given samples.
fn score(model: &Classifier, dataset: &Dataset, positions: &[usize]) -> Result<(Vec<f64>, Vec<u8>)> {
    let size = model.config.input_size;
    let mut scores = Vec::with_capacity(positions.len());
    for chunk in positions.chunks(EVAL_CHUNK) {
        let images: Vec<Image> = chunk
            .iter()
            .map(|&p| resize_bilinear(&dataset.samples[p].image, size, size))
            .collect();
        let domains: Vec<Domain> = chunk.iter().map(|&p| dataset.samples[p].domain).collect();
        scores.extend(model.predict_malignancy(&stack_images(&images)?, &domains)?);
    }
    let labels = positions.iter().map(|&p| dataset.samples[p].label).collect();
    Ok((scores, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_evenly() {
        let sizes: Vec<usize> = chunk_sizes(161, 11).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 161);
        assert!(sizes.iter().all(|&s| s == 14 || s == 15));
        assert_eq!(chunk_sizes(32, 2).collect::<Vec<_>>(), [16, 16]);
    }

    #[test]
    fn cycle_visits_everything_each_pass() {
        let mut rng = rng::seeded(0);
        let mut c = Cycle::new((0..5).collect());
        let mut first: Vec<usize> = c.take(5, &mut rng);
        first.sort_unstable();
        assert_eq!(first, [0, 1, 2, 3, 4]);
        assert_eq!(c.take(7, &mut rng).len(), 7);
        assert!(Cycle::new(Vec::new()).take(3, &mut rng).is_empty());
    }
}
