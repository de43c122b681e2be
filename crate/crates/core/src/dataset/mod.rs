//! Domain-tagged samples, fold splitting, augmentation and the synthetic
//! dual-domain generator.

mod augment;
mod folds;
mod synthetic;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, augment_with, resize_bilinear, AugmentConfig, AugmentParams};
pub use folds::{make_folds, subsample_stratified, FoldSplit};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Lesion category. Mass is the data-rich source domain, non-mass the
/// target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Mass,
    Nonmass,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Mass, Domain::Nonmass];

    /// One-hot conditioning vector: mass = `[1, 0]`, non-mass = `[0, 1]`.
    pub fn embedding(self) -> [f64; 2] {
        match self {
            Domain::Mass => [1.0, 0.0],
            Domain::Nonmass => [0.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        match self {
            Domain::Mass => 0,
            Domain::Nonmass => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Mass => "mass",
            Domain::Nonmass => "nonmass",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass" => Ok(Domain::Mass),
            "nonmass" => Ok(Domain::Nonmass),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown domain `{other}` (expected mass or nonmass)"
            ))),
        }
    }
}

/// A value held once per domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerDomain<T> {
    pub mass: T,
    pub nonmass: T,
}

impl<T> PerDomain<T> {
    pub fn new(mass: T, nonmass: T) -> Self {
        Self { mass, nonmass }
    }

    pub fn get(&self, domain: Domain) -> &T {
        match domain {
            Domain::Mass => &self.mass,
            Domain::Nonmass => &self.nonmass,
        }
    }

    pub fn get_mut(&mut self, domain: Domain) -> &mut T {
        match domain {
            Domain::Mass => &mut self.mass,
            Domain::Nonmass => &mut self.nonmass,
        }
    }
}

/// Grayscale image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(alloc::format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: alloc::vec![value; height * width],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    /// 0 = benign, 1 = malignant.
    pub label: u8,
    pub domain: Domain,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::InvalidArgument(alloc::format!(
                "sample {}: label {} is not 0 or 1",
                self.id,
                self.label
            )));
        }
        if !self.image.in_unit_range() {
            return Err(Error::InvalidArgument(alloc::format!(
                "sample {}: pixel values outside [0, 1]",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Manifest,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Validates sample invariants and id uniqueness.
    pub fn new(samples: Vec<Sample>, provenance: Provenance) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            s.validate()?;
            if let Some(prev) = seen.insert(s.id.as_str(), i) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "duplicate id `{}` at positions {prev} and {i}",
                    s.id
                )));
            }
        }
        Ok(Self { samples, provenance })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, domain: Domain, label: u8) -> usize {
        self.samples
            .iter()
            .filter(|s| s.domain == domain && s.label == label)
            .count()
    }

    /// Map from id to position.
    pub fn index_by_id(&self) -> BTreeMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Positions of `ids`, in the order given.
    pub fn positions(&self, ids: &[String]) -> Result<Vec<usize>> {
        let index = self.index_by_id();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(alloc::format!("id `{id}` not in dataset")))
            })
            .collect()
    }

    /// Checks the training precondition: every (domain, label) stratum
    /// holds at least `min` samples.
    pub fn require_strata(&self, min: usize) -> Result<()> {
        for domain in Domain::ALL {
            for label in 0..=1 {
                let count = self.count(domain, label);
                if count < min {
                    return Err(Error::StratumTooSmall {
                        domain,
                        label,
                        count,
                        needed: min,
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn sample(id: &str, label: u8, domain: Domain) -> Sample {
        Sample {
            id: id.to_string(),
            image: Image::filled(2, 2, 0.5),
            label,
            domain,
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = Dataset::new(
            alloc::vec![sample("a", 0, Domain::Mass), sample("a", 1, Domain::Nonmass)],
            Provenance::Manifest,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(m) if m.contains("duplicate")));
    }

    #[test]
    fn rejects_bad_label_and_pixels() {
        assert!(sample("a", 2, Domain::Mass).validate().is_err());
        let mut s = sample("b", 0, Domain::Mass);
        s.image.pixels[0] = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn domain_parsing() {
        assert_eq!("mass".parse::<Domain>().unwrap(), Domain::Mass);
        assert_eq!("nonmass".parse::<Domain>().unwrap(), Domain::Nonmass);
        assert!("Mass".parse::<Domain>().is_err());
        assert_eq!(Domain::Nonmass.embedding(), [0.0, 1.0]);
    }
}
