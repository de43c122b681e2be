//! Prior-guided distribution alignment.
//!
//! Predicted malignancy is reweighted per domain so that the model's
//! running mean prediction `ē` is pulled to the domain's malignancy prior
//! `q`: the malignant mass is scaled by `q/ē`, the benign mass by
//! `(1−q)/(1−ē)`, and the pair renormalized.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Domain, PerDomain};
use crate::error::{Error, Result};

/// Ground-truth malignancy rate per domain, both strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainPriors {
    pub q_mass: f64,
    pub q_nonmass: f64,
}

impl DomainPriors {
    pub fn new(q_mass: f64, q_nonmass: f64) -> Result<Self> {
        for q in [q_mass, q_nonmass] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidArgument(alloc::format!("prior {q} outside (0, 1)")));
            }
        }
        Ok(Self { q_mass, q_nonmass })
    }

    pub fn get(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Mass => self.q_mass,
            Domain::Nonmass => self.q_nonmass,
        }
    }
}

/// Malignant fraction per domain over the given samples (the training
/// split).
pub fn compute_priors(dataset: &Dataset) -> Result<DomainPriors> {
    compute_priors_from(dataset.samples.iter().map(|s| (s.domain, s.label)))
}

pub fn compute_priors_from(labels: impl IntoIterator<Item = (Domain, u8)>) -> Result<DomainPriors> {
    let mut counts = PerDomain::new([0usize; 2], [0usize; 2]);
    for (domain, label) in labels {
        counts.get_mut(domain)[usize::from(label.min(1))] += 1;
    }
    let rate = |domain: Domain| {
        let [benign, malignant] = *counts.get(domain);
        match (benign, malignant) {
            (0, 0) => Err(Error::EmptyDomain(domain)),
            (0, _) | (_, 0) => Err(Error::DegenerateDomain(domain)),
            _ => Ok(malignant as f64 / (benign + malignant) as f64),
        }
    };
    Ok(DomainPriors {
        q_mass: rate(Domain::Mass)?,
        q_nonmass: rate(Domain::Nonmass)?,
    })
}

/// Exponential moving average of the mean predicted malignancy per domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaTracker {
    pub value: PerDomain<f64>,
    pub momentum: f64,
    pub clamp_lo: f64,
    pub updates: PerDomain<u64>,
}

impl EmaTracker {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_CLAMP: f64 = 1e-4;

    /// Starts at the priors, so alignment begins as the identity.
    pub fn new(priors: &DomainPriors, momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "EMA momentum {momentum} outside (0, 1)"
            )));
        }
        let clamp_lo = Self::DEFAULT_CLAMP;
        let clamp = |v: f64| v.clamp(clamp_lo, 1.0 - clamp_lo);
        Ok(Self {
            value: PerDomain::new(clamp(priors.q_mass), clamp(priors.q_nonmass)),
            momentum,
            clamp_lo,
            updates: PerDomain::new(0, 0),
        })
    }

    pub fn get(&self, domain: Domain) -> f64 {
        *self.value.get(domain)
    }

    /// `value ← m·value + (1−m)·batch_mean`, then clamped.
    pub fn update(&mut self, batch_mean_pred: f64, domain: Domain) -> Result<()> {
        if !(0.0..=1.0).contains(&batch_mean_pred) {
            return Err(Error::InvalidArgument(alloc::format!(
                "batch mean prediction {batch_mean_pred} outside [0, 1]"
            )));
        }
        let v = self.value.get_mut(domain);
        *v = (self.momentum * *v + (1.0 - self.momentum) * batch_mean_pred)
            .clamp(self.clamp_lo, 1.0 - self.clamp_lo);
        *self.updates.get_mut(domain) += 1;
        Ok(())
    }
}

/// Functional form of [`EmaTracker::update`].
pub fn ema_update(mut tracker: EmaTracker, batch_mean_pred: f64, domain: Domain) -> Result<EmaTracker> {
    tracker.update(batch_mean_pred, domain)?;
    Ok(tracker)
}

/// Class-mass ratios `(q/ē, (1−q)/(1−ē))`.
fn ratios(q: f64, tracked: f64) -> (f64, f64) {
    (q / tracked, (1.0 - q) / (1.0 - tracked))
}

/// Aligned malignancy score for one prediction.
///
/// Identity when the tracker sits at the prior; strictly increasing in
/// `p_hat`; maps 0 and 1 to themselves.
pub fn align(p_hat: f64, domain: Domain, priors: &DomainPriors, tracker: &EmaTracker) -> f64 {
    let (r_mal, r_ben) = ratios(priors.get(domain), tracker.get(domain));
    if r_mal == r_ben {
        return p_hat;
    }
    let mal = p_hat * r_mal;
    mal / (mal + (1.0 - p_hat) * r_ben)
}

/// The alignment as an additive shift of the malignant-vs-benign logit:
/// `logit(align(p)) = logit(p) + ln(r_mal / r_ben)`.
pub fn logit_shift(domain: Domain, priors: &DomainPriors, tracker: &EmaTracker) -> f64 {
    let (r_mal, r_ben) = ratios(priors.get(domain), tracker.get(domain));
    if r_mal == r_ben {
        0.0
    } else {
        libm::log(r_mal) - libm::log(r_ben)
    }
}

/// Mean prediction per domain over the rows flagged as pure-domain.
pub fn domain_means(
    p_hats: &[f64],
    domains: &[Domain],
    include: impl Fn(usize) -> bool,
) -> PerDomain<Option<f64>> {
    let mut sums = PerDomain::new((0.0, 0usize), (0.0, 0usize));
    for (i, (&p, &d)) in p_hats.iter().zip(domains).enumerate() {
        if include(i) {
            let s = sums.get_mut(d);
            s.0 += p;
            s.1 += 1;
        }
    }
    let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    PerDomain::new(mean(sums.mass), mean(sums.nonmass))
}

/// Aligns a batch elementwise. In training mode each domain present in the
/// batch first updates the tracker with its pre-alignment mean prediction.
pub fn align_batch(
    p_hats: &[f64],
    domains: &[Domain],
    priors: &DomainPriors,
    tracker: &mut EmaTracker,
    train_mode: bool,
) -> Result<alloc::vec::Vec<f64>> {
    if p_hats.len() != domains.len() {
        return Err(Error::Shape(alloc::format!(
            "{} predictions for {} domain tags",
            p_hats.len(),
            domains.len()
        )));
    }
    if train_mode {
        let means = domain_means(p_hats, domains, |_| true);
        for d in Domain::ALL {
            if let Some(m) = *means.get(d) {
                tracker.update(m, d)?;
            }
        }
    }
    Ok(p_hats
        .iter()
        .zip(domains)
        .map(|(&p, &d)| align(p, d, priors, tracker))
        .collect())
}
