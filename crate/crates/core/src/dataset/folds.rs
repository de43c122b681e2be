use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::rng;

/// One train/test partition of a k-fold split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Stratified k-fold split keyed on (domain, label).
///
/// Each stratum is shuffled and dealt round-robin; the dealer's starting
/// fold carries over between strata so remainders spread evenly. Ids in
/// each returned set follow dataset order.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "need at least 2 folds, got {k}"
        )));
    }
    dataset.require_strata(k)?;

    let mut rng = rng::stream(seed, &[rng::tag::FOLDS]);
    let mut assignment = vec![0usize; dataset.len()];
    let mut next_fold = 0;
    for domain in Domain::ALL {
        for label in 0..=1u8 {
            let mut members: Vec<usize> = dataset
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.domain == domain && s.label == label)
                .map(|(i, _)| i)
                .collect();
            members.shuffle(&mut rng);
            for idx in members {
                assignment[idx] = next_fold;
                next_fold = (next_fold + 1) % k;
            }
        }
    }

    Ok((0..k)
        .map(|fold| {
            let (test, train): (Vec<_>, Vec<_>) = dataset
                .samples
                .iter()
                .zip(&assignment)
                .partition(|(_, &f)| f == fold);
            FoldSplit {
                fold_index: fold,
                train_ids: train.into_iter().map(|(s, _)| s.id.clone()).collect(),
                test_ids: test.into_iter().map(|(s, _)| s.id.clone()).collect(),
            }
        })
        .collect())
}

/// Keeps `round(ratio·m)` members of each label among `positions`,
/// preserving their relative order.
///
/// Fails if any label would keep fewer than two samples.
pub fn subsample_stratified(
    dataset: &Dataset,
    positions: &[usize],
    ratio: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "ratio {ratio} outside (0, 1]"
        )));
    }
    if ratio == 1.0 {
        return Ok(positions.to_vec());
    }
    let mut rng = rng::stream(seed, &[rng::tag::SUBSAMPLE]);
    let mut keep = vec![false; positions.len()];
    for label in 0..=1u8 {
        let mut members: Vec<usize> = (0..positions.len())
            .filter(|&j| dataset.samples[positions[j]].label == label)
            .collect();
        let target = libm::round(ratio * members.len() as f64) as usize;
        if target < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "ratio {ratio} keeps {target} samples with label {label}, need at least 2"
            )));
        }
        members.shuffle(&mut rng);
        for &j in &members[..target] {
            keep[j] = true;
        }
    }
    Ok(positions
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(&p, _)| p)
        .collect())
}
