//! ROC AUC (Mann–Whitney form, ties credited one half) and fold
//! aggregation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores paired with binary labels; holds both classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(alloc::format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores"));
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::SingleClass);
        }
        Ok(Self { scores, labels })
    }

    fn class_counts(&self) -> (usize, usize) {
        let p = self.labels.iter().filter(|&&l| l == 1).count();
        (p, self.labels.len() - p)
    }
}

/// Rank-sum AUC in `O(n log n)`.
pub fn auc(set: &ScoredSet) -> f64 {
    let n = set.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    // sum of 1-based average ranks over positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && set.scores[order[j]] == set.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| set.labels[k] == 1).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, neg) = set.class_counts();
    let p = p as f64;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64)
}

/// Direct count over every positive–negative pair.
pub fn auc_bruteforce(set: &ScoredSet) -> f64 {
    let mut credit = 0.0;
    for (i, &si) in set.scores.iter().enumerate() {
        if set.labels[i] != 1 {
            continue;
        }
        for (j, &sj) in set.scores.iter().enumerate() {
            if set.labels[j] == 1 {
                continue;
            }
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    let (p, n) = set.class_counts();
    credit / (p * n) as f64
}

/// ROC curve vertices `(false positive rate, true positive rate)` from
/// the highest threshold down, tied scores entering together.
pub fn roc_points(set: &ScoredSet) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let (p, n) = set.class_counts();
    let mut points = alloc::vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == s {
            if set.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    points
}

/// Mean and population standard deviation.
pub fn aggregate(per_fold: &[f64]) -> Result<(f64, f64)> {
    if per_fold.is_empty() {
        return Err(Error::Empty);
    }
    let n = per_fold.len() as f64;
    let mean = per_fold.iter().sum::<f64>() / n;
    let var = per_fold.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, libm::sqrt(var)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn hand_cases() {
        let perfect = set(&[0.0, 0.0, 1.0, 1.0], &[0, 0, 1, 1]);
        assert_eq!(auc(&perfect), 1.0);
        assert_eq!(auc_bruteforce(&perfect), 1.0);
        let ties = set(&[0.3; 5], &[0, 1, 0, 1, 1]);
        assert_eq!(auc(&ties), 0.5);
        assert_eq!(auc_bruteforce(&ties), 0.5);
        // pairs (0.35 vs 0.1, 0.4) and (0.8 vs 0.1, 0.4): 1 + 0 + 1 + 1 = 3 of 4
        let mixed = set(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        assert_eq!(auc(&mixed), 0.75);
        assert_eq!(auc_bruteforce(&mixed), 0.75);
    }

    #[test]
    fn single_class_rejected() {
        assert_eq!(
            ScoredSet::new(vec![0.1, 0.2], vec![1, 1]),
            Err(Error::SingleClass)
        );
        assert_eq!(
            ScoredSet::new(vec![0.1, 0.2], vec![0, 0]),
            Err(Error::SingleClass)
        );
        assert!(ScoredSet::new(vec![0.1], vec![0, 1]).is_err());
    }

    #[test]
    fn randomized_oracle_agreement() {
        let mut r = rng::seeded(21);
        for _ in 0..200 {
            let n = r.random_range(2..=100);
            let levels = r.random_range(2..=20);
            let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores = (0..n)
                .map(|_| r.random_range(0..levels) as f64 / levels as f64)
                .collect();
            let s = ScoredSet::new(scores, labels).unwrap();
            assert!((auc(&s) - auc_bruteforce(&s)).abs() < 1e-12);
        }
    }

    #[test]
    fn roc_ends_at_corners() {
        let s = set(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        let pts = roc_points(&s);
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        // trapezoid area equals the rank statistic
        let area: f64 = pts
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum();
        assert!((area - 0.75).abs() < 1e-12);
    }

    #[test]
    fn aggregation() {
        assert_eq!(aggregate(&[0.7]).unwrap(), (0.7, 0.0));
        let (m, s) = aggregate(&[0.6, 0.8]).unwrap();
        assert!((m - 0.7).abs() < 1e-15 && (s - 0.1).abs() < 1e-15);
        let (m, s) = aggregate(&[0.7; 5]).unwrap();
        assert!((m - 0.7).abs() < 1e-15 && s == 0.0);
        assert_eq!(aggregate(&[]), Err(Error::Empty));
        assert_eq!(
            aggregate(&[0.1, 0.5, 0.9]).unwrap(),
            aggregate(&[0.9, 0.1, 0.5]).unwrap()
        );
    }

    fn scored() -> impl Strategy<Value = ScoredSet> {
        proptest::collection::vec((0u32..30, 0u8..=1), 2..80).prop_filter_map("needs both classes", |pairs| {
            let (scores, labels) = pairs.into_iter().map(|(s, l)| (s as f64 / 30.0, l)).unzip();
            ScoredSet::new(scores, labels).ok()
        })
    }

    proptest! {
        #[test]
        fn reversal_complements(s in scored()) {
            let rev = ScoredSet::new(s.scores.iter().map(|x| 1.0 - x).collect(), s.labels.clone()).unwrap();
            prop_assert!((auc(&rev) - (1.0 - auc(&s))).abs() < 1e-12);
        }

        #[test]
        fn monotone_transform_invariance(s in scored()) {
            let t = ScoredSet::new(s.scores.iter().map(|x| libm::exp(3.0 * x) - 7.0).collect(), s.labels.clone()).unwrap();
            prop_assert_eq!(auc(&t), auc(&s));
        }
    }
}
