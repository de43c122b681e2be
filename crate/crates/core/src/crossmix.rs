//! Cross-domain sample mixing.
//!
//! A non-mass image is blended with a mass image, `x′ = λ·x_nm + (1−λ)·x_m`
//! with `λ ~ Beta(α, α)`, and the labels are blended the same way. The
//! blend is tagged non-mass when `λ > 0.5` (it is mostly the non-mass
//! image), mass otherwise.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, Image, Sample};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Partner drawn from mass samples with the same label.
    SameMalignancy,
    /// Partner drawn from the whole mass pool.
    AcrossMalignancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub alpha: f64,
    pub p_apply: f64,
    pub pairing: Pairing,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            p_apply: 0.5,
            pairing: Pairing::SameMalignancy,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "crossmix.alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.p_apply) {
            return Err(Error::Config(alloc::format!(
                "crossmix.p_apply must lie in [0, 1], got {}",
                self.p_apply
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSample {
    pub image: Image,
    pub soft_label: f64,
    pub domain: Domain,
    pub lam: f64,
    /// `(non-mass id, mass id)`
    pub source_ids: (String, String),
}

/// A training item after the mixing stage.
#[derive(Debug, Clone, PartialEq)]
pub enum MixItem {
    Original(Sample),
    Mixed(MixedSample),
}

impl MixItem {
    pub fn image(&self) -> &Image {
        match self {
            MixItem::Original(s) => &s.image,
            MixItem::Mixed(m) => &m.image,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            MixItem::Original(s) => s.domain,
            MixItem::Mixed(m) => m.domain,
        }
    }

    pub fn soft_label(&self) -> f64 {
        match self {
            MixItem::Original(s) => f64::from(s.label),
            MixItem::Mixed(m) => m.soft_label,
        }
    }

    pub fn is_mixed(&self) -> bool {
        matches!(self, MixItem::Mixed(_))
    }
}

pub fn sample_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|_| Error::InvalidArgument(alloc::format!("Beta shape must be positive, got {alpha}")))?;
    Ok(beta.sample(rng))
}

/// The domain tag of a blend with weight `lam` on the non-mass image.
pub fn mixed_domain(lam: f64) -> Domain {
    if lam > 0.5 {
        Domain::Nonmass
    } else {
        Domain::Mass
    }
}

pub fn crossmix(x_nm: &Sample, x_m: &Sample, lam: f64) -> Result<MixedSample> {
    if x_nm.domain != Domain::Nonmass || x_m.domain != Domain::Mass {
        return Err(Error::InvalidArgument(alloc::format!(
            "crossmix expects (nonmass, mass), got ({}, {})",
            x_nm.domain,
            x_m.domain
        )));
    }
    let (a, b) = (&x_nm.image, &x_m.image);
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Shape(alloc::format!(
            "cannot mix {}x{} with {}x{}",
            a.height,
            a.width,
            b.height,
            b.width
        )));
    }
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidArgument(alloc::format!(
            "lambda {lam} outside [0, 1]"
        )));
    }
    let pixels = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&p, &q)| blend(p, q, lam))
        .collect();
    Ok(MixedSample {
        image: Image {
            height: a.height,
            width: a.width,
            pixels,
        },
        soft_label: blend(f64::from(x_nm.label), f64::from(x_m.label), lam),
        domain: mixed_domain(lam),
        lam,
        source_ids: (x_nm.id.clone(), x_m.id.clone()),
    })
}

/// `lam·a + (1−lam)·b`, exact at the endpoints and for `a == b`.
#[inline]
fn blend(a: f64, b: f64, lam: f64) -> f64 {
    if a == b {
        a
    } else {
        (lam * a + (1.0 - lam) * b).clamp(a.min(b), a.max(b))
    }
}

/// Mass samples indexed by label for partner draws.
#[derive(Debug, Clone)]
pub struct MassPool<'a> {
    samples: Vec<&'a Sample>,
    by_label: [Vec<usize>; 2],
}

impl<'a> MassPool<'a> {
    pub fn new(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self> {
        let samples: Vec<&Sample> = samples.into_iter().collect();
        let mut by_label = [Vec::new(), Vec::new()];
        for (i, s) in samples.iter().enumerate() {
            if s.domain != Domain::Mass {
                return Err(Error::InvalidArgument(alloc::format!(
                    "mass pool holds {} sample {}",
                    s.domain,
                    s.id
                )));
            }
            by_label[usize::from(s.label.min(1))].push(i);
        }
        Ok(Self { samples, by_label })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn draw(&self, label: Option<u8>, rng: &mut Rng) -> Result<&'a Sample> {
        match label {
            Some(l) => {
                let group = &self.by_label[usize::from(l.min(1))];
                if group.is_empty() {
                    return Err(Error::EmptyLabelGroup(l));
                }
                Ok(self.samples[group[rng.random_range(0..group.len())]])
            }
            None => {
                if self.samples.is_empty() {
                    return Err(Error::InvalidArgument("mass pool is empty".into()));
                }
                Ok(self.samples[rng.random_range(0..self.samples.len())])
            }
        }
    }
}

/// Mixes each non-mass sample with probability `p_apply`, passing the rest
/// through unchanged.
pub fn pair_batch(
    nonmass_batch: &[Sample],
    mass_pool: &MassPool<'_>,
    config: &MixConfig,
    rng: &mut Rng,
) -> Result<Vec<MixItem>> {
    pair_batch_with(nonmass_batch, mass_pool, config, rng, |s, _| s.clone())
}

/// [`pair_batch`] with a hook that prepares each drawn partner (e.g.
/// augmentation to the batch image size) before blending.
pub fn pair_batch_with(
    nonmass_batch: &[Sample],
    mass_pool: &MassPool<'_>,
    config: &MixConfig,
    rng: &mut Rng,
    mut prepare: impl FnMut(&Sample, &mut Rng) -> Sample,
) -> Result<Vec<MixItem>> {
    config.validate()?;
    if config.pairing == Pairing::SameMalignancy && config.p_apply > 0.0 {
        for label in 0..=1 {
            if mass_pool.by_label[usize::from(label)].is_empty() {
                return Err(Error::EmptyLabelGroup(label));
            }
        }
    }
    nonmass_batch
        .iter()
        .map(|x_nm| {
            if !rng.random_bool(config.p_apply) {
                return Ok(MixItem::Original(x_nm.clone()));
            }
            let lam = sample_lambda(config.alpha, rng)?;
            let wanted = match config.pairing {
                Pairing::SameMalignancy => Some(x_nm.label),
                Pairing::AcrossMalignancy => None,
            };
            let partner = prepare(mass_pool.draw(wanted, rng)?, rng);
            crossmix(x_nm, &partner, lam).map(MixItem::Mixed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn sample(id: &str, domain: Domain, label: u8, value: f64) -> Sample {
        Sample {
            id: id.to_string(),
            image: Image::filled(3, 3, value),
            label,
            domain,
        }
    }

    fn pool_samples() -> Vec<Sample> {
        (0..6)
            .map(|i| {
                sample(
                    &alloc::format!("m{i}"),
                    Domain::Mass,
                    (i % 2) as u8,
                    0.1 * i as f64,
                )
            })
            .collect()
    }

    #[test]
    fn endpoint_lambda_one() {
        let nm = sample("a", Domain::Nonmass, 1, 0.3);
        let m = sample("b", Domain::Mass, 0, 0.9);
        let out = crossmix(&nm, &m, 1.0).unwrap();
        assert_eq!(out.image, nm.image);
        assert_eq!(out.soft_label, 1.0);
        assert_eq!(out.domain, Domain::Nonmass);
        let out = crossmix(&nm, &m, 0.0).unwrap();
        assert_eq!(out.image, m.image);
        assert_eq!(out.soft_label, 0.0);
        assert_eq!(out.domain, Domain::Mass);
    }

    #[test]
    fn midpoint_goes_to_mass() {
        let nm = sample("a", Domain::Nonmass, 1, 0.0);
        let m = sample("b", Domain::Mass, 1, 1.0);
        let out = crossmix(&nm, &m, 0.5).unwrap();
        assert!(out.image.pixels.iter().all(|&p| p == 0.5));
        assert_eq!(out.soft_label, 1.0);
        assert_eq!(out.domain, Domain::Mass);
        assert_eq!(out.source_ids, ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn soft_label_at_point_seven() {
        let nm = sample("a", Domain::Nonmass, 1, 0.2);
        let m = sample("b", Domain::Mass, 0, 0.4);
        let out = crossmix(&nm, &m, 0.7).unwrap();
        assert!((out.soft_label - 0.7).abs() < 1e-15);
        assert_eq!(out.domain, Domain::Nonmass);
    }

    #[test]
    fn crossmix_errors() {
        let nm = sample("a", Domain::Nonmass, 1, 0.2);
        let m = sample("b", Domain::Mass, 0, 0.4);
        assert!(crossmix(&m, &nm, 0.5).is_err());
        let mut big = m.clone();
        big.image = Image::filled(4, 4, 0.1);
        assert!(matches!(crossmix(&nm, &big, 0.5), Err(Error::Shape(_))));
        assert!(crossmix(&nm, &m, 1.2).is_err());
        assert!(sample_lambda(0.0, &mut rng::seeded(0)).is_err());
        assert!(sample_lambda(-1.0, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn no_mixing_at_zero_probability() {
        let owned = pool_samples();
        let pool = MassPool::new(&owned).unwrap();
        let batch = vec![
            sample("n0", Domain::Nonmass, 0, 0.5),
            sample("n1", Domain::Nonmass, 1, 0.6),
        ];
        let cfg = MixConfig {
            p_apply: 0.0,
            ..MixConfig::default()
        };
        let out = pair_batch(&batch, &pool, &cfg, &mut rng::seeded(1)).unwrap();
        let back: Vec<Sample> = out
            .into_iter()
            .map(|i| match i {
                MixItem::Original(s) => s,
                MixItem::Mixed(_) => panic!("mixed at p=0"),
            })
            .collect();
        assert_eq!(back, batch);
    }

    #[test]
    fn same_malignancy_always_mixing() {
        let owned = pool_samples();
        let pool = MassPool::new(&owned).unwrap();
        let batch: Vec<Sample> = (0..40)
            .map(|i| sample(&alloc::format!("n{i}"), Domain::Nonmass, (i % 2) as u8, 0.5))
            .collect();
        let cfg = MixConfig {
            p_apply: 1.0,
            ..MixConfig::default()
        };
        let out = pair_batch(&batch, &pool, &cfg, &mut rng::seeded(2)).unwrap();
        for (item, src) in out.iter().zip(&batch) {
            let MixItem::Mixed(m) = item else {
                panic!("unmixed at p=1")
            };
            assert_eq!(m.soft_label, f64::from(src.label));
            let partner = owned.iter().find(|s| s.id == m.source_ids.1).unwrap();
            assert_eq!(partner.label, src.label);
        }
    }

    #[test]
    fn mixing_frequency_is_p_apply() {
        let owned = pool_samples();
        let pool = MassPool::new(&owned).unwrap();
        let batch = vec![sample("n", Domain::Nonmass, 1, 0.5)];
        let cfg = MixConfig::default();
        let mut r = rng::seeded(3);
        let mixed = (0..10_000)
            .filter(|_| pair_batch(&batch, &pool, &cfg, &mut r).unwrap()[0].is_mixed())
            .count();
        let frac = mixed as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "mix fraction {frac}");
    }

    #[test]
    fn empty_label_group_rejected() {
        let owned: Vec<Sample> = pool_samples().into_iter().filter(|s| s.label == 0).collect();
        let pool = MassPool::new(&owned).unwrap();
        let batch = vec![sample("n", Domain::Nonmass, 1, 0.5)];
        let cfg = MixConfig {
            p_apply: 1.0,
            ..MixConfig::default()
        };
        assert_eq!(
            pair_batch(&batch, &pool, &cfg, &mut rng::seeded(0)).unwrap_err(),
            Error::EmptyLabelGroup(1)
        );
        let across = MixConfig {
            pairing: Pairing::AcrossMalignancy,
            ..cfg
        };
        assert!(pair_batch(&batch, &pool, &across, &mut rng::seeded(0)).is_ok());
    }

    proptest! {
        #[test]
        fn convexity_labels_and_domain_rule(
            lam in 0.0f64..=1.0,
            a in proptest::collection::vec(0.0f64..=1.0, 9),
            b in proptest::collection::vec(0.0f64..=1.0, 9),
            y_nm in 0u8..=1,
            y_m in 0u8..=1,
        ) {
            let nm = Sample { id: "a".into(), image: Image::new(3, 3, a).unwrap(), label: y_nm, domain: Domain::Nonmass };
            let m = Sample { id: "b".into(), image: Image::new(3, 3, b).unwrap(), label: y_m, domain: Domain::Mass };
            let out = crossmix(&nm, &m, lam).unwrap();
            for ((x, p), q) in out.image.pixels.iter().zip(&nm.image.pixels).zip(&m.image.pixels) {
                prop_assert!(p.min(*q) <= *x && *x <= p.max(*q));
            }
            prop_assert_eq!(out.soft_label, blend(f64::from(y_nm), f64::from(y_m), lam));
            prop_assert_eq!(out.domain == Domain::Nonmass, lam > 0.5);
            if y_nm == y_m {
                prop_assert_eq!(out.soft_label, f64::from(y_nm));
            }
        }
    }
}
