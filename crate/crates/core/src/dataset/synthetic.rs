use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Domain, Image, PerDomain, Provenance, Sample};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Parameters of the synthetic two-domain lesion generator.
///
/// Malignancy is encoded the same way in both domains (an irregular lesion
/// boundary) while the pixel statistics and the malignancy rate differ per
/// domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_mass: usize,
    pub n_nonmass: usize,
    pub mal_rate_mass: f64,
    pub mal_rate_nonmass: f64,
    pub image_size: usize,
    pub background_mean: PerDomain<f64>,
    /// Per-image standard deviation of the background level.
    pub background_jitter: PerDomain<f64>,
    /// Darkening of the lesion relative to the background.
    pub contrast: PerDomain<f64>,
    /// Amplitude of the radial boundary ripple on malignant lesions, as a
    /// fraction of the lesion's mean radius.
    pub boundary_irregularity_malignant: f64,
    pub blur_sigma: PerDomain<f64>,
    /// Additive per-pixel Gaussian noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_mass: 1200,
            n_nonmass: 200,
            mal_rate_mass: 0.6,
            mal_rate_nonmass: 0.4,
            image_size: 64,
            background_mean: PerDomain::new(0.65, 0.30),
            background_jitter: PerDomain::new(0.06, 0.06),
            contrast: PerDomain::new(0.3, 0.18),
            boundary_irregularity_malignant: 0.5,
            blur_sigma: PerDomain::new(0.8, 1.6),
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.n_mass == 0 || self.n_nonmass == 0 {
            return bad("sample counts must be at least 1");
        }
        for rate in [self.mal_rate_mass, self.mal_rate_nonmass] {
            if !(rate > 0.0 && rate < 1.0) {
                return bad("malignancy rates must lie strictly inside (0, 1)");
            }
        }
        if self.image_size < 8 {
            return bad("image_size must be at least 8");
        }
        for d in Domain::ALL {
            if !(0.0..=1.0).contains(self.background_mean.get(d)) {
                return bad("background_mean must lie in [0, 1]");
            }
            if !(*self.contrast.get(d) > 0.0) {
                return bad("contrast must be positive");
            }
            if !(*self.blur_sigma.get(d) >= 0.0) || !(*self.background_jitter.get(d) >= 0.0) {
                return bad("blur_sigma and background_jitter must be non-negative");
            }
        }
        if !(self.boundary_irregularity_malignant >= 0.0) || !(self.noise_std >= 0.0) {
            return bad("irregularity and noise must be non-negative");
        }
        Ok(())
    }

    fn rate(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Mass => self.mal_rate_mass,
            Domain::Nonmass => self.mal_rate_nonmass,
        }
    }

    fn count(&self, domain: Domain) -> usize {
        match domain {
            Domain::Mass => self.n_mass,
            Domain::Nonmass => self.n_nonmass,
        }
    }
}

/// Generates a dataset: all mass samples, then all non-mass samples.
///
/// Exactly `round(n·rate)` samples per domain are malignant. The output is
/// a pure function of the config.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut samples = Vec::with_capacity(config.n_mass + config.n_nonmass);
    for domain in Domain::ALL {
        let n = config.count(domain);
        let n_mal = libm::round(n as f64 * config.rate(domain)) as usize;
        let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_mal)).collect();
        let mut rng = rng::stream(config.seed, &[rng::tag::SYNTH, domain.index() as u64]);
        labels.shuffle(&mut rng);
        for (i, label) in labels.into_iter().enumerate() {
            samples.push(Sample {
                id: alloc::format!("{domain}_{i:05}"),
                image: draw_lesion(config, domain, label, &mut rng),
                label,
                domain,
            });
        }
    }
    Dataset::new(samples, Provenance::Synthetic)
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_lesion(config: &SyntheticConfig, domain: Domain, label: u8, rng: &mut Rng) -> Image {
    let s = config.image_size as f64;
    let background = (config.background_mean.get(domain)
        + config.background_jitter.get(domain) * normal(rng))
    .clamp(0.0, 1.0);
    let cy = s / 2.0 + rng.random_range(-0.1..0.1) * s;
    let cx = s / 2.0 + rng.random_range(-0.1..0.1) * s;
    let (semi_a, semi_b) = match domain {
        Domain::Mass => {
            let a = rng.random_range(0.16..0.24) * s;
            (a, a * rng.random_range(0.75..1.0))
        }
        Domain::Nonmass => (rng.random_range(0.26..0.36) * s, rng.random_range(0.09..0.14) * s),
    };
    let angle = rng.random_range(0.0..PI);
    let (sin_t, cos_t) = libm::sincos(angle);
    let ripple = if label == 1 {
        config.boundary_irregularity_malignant
    } else {
        0.0
    };
    let lobes = rng.random_range(5..=9) as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    let depth = *config.contrast.get(domain);
    // The ripple scales with the lesion's overall size, so thin non-mass
    // lesions show lobes as clearly as round ones.
    let mean_radius = libm::sqrt(semi_a * semi_b);

    let n = config.image_size;
    let mut pixels = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            let u = dx * cos_t + dy * sin_t;
            let v = -dx * sin_t + dy * cos_t;
            let dist = libm::sqrt(u * u + v * v);
            let theta = libm::atan2(v, u);
            let (st, ct) = libm::sincos(theta);
            let (eb, ea) = (semi_b * ct, semi_a * st);
            let ellipse = semi_a * semi_b / libm::sqrt(eb * eb + ea * ea);
            let radius = ellipse + ripple * mean_radius * libm::sin(lobes * theta + phase);
            let inside = (radius - dist + 0.5).clamp(0.0, 1.0);
            pixels[y * n + x] = background - depth * inside;
        }
    }
    let sigma = *config.blur_sigma.get(domain);
    if sigma > 0.0 {
        gaussian_blur(&mut pixels, n, sigma);
    }
    for p in &mut pixels {
        *p = (*p + config.noise_std * normal(rng)).clamp(0.0, 1.0);
    }
    Image {
        height: n,
        width: n,
        pixels,
    }
}

/// Separable Gaussian blur with clamped borders.
fn gaussian_blur(pixels: &mut [f64], n: usize, sigma: f64) {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / total).collect();
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * pixels[y * n + clamp(x as isize + j as isize - radius)])
                .sum();
        }
    }
    for y in 0..n {
        for x in 0..n {
            pixels[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[clamp(y as isize + j as isize - radius) * n + x])
                .sum();
        }
    }
}
