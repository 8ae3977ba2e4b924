//! Planted-block relational data and random train/test splits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Entry, RelationData};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid block spec: {0}")]
    Spec(String),
    #[error("holdout fraction {0} must lie in (0, 1)")]
    HoldoutFraction(f64),
    #[error("holding out {test} of {total} entries leaves no training data")]
    EmptyTrain { test: usize, total: usize },
}

/// Cluster sizes, between-cluster link probabilities and label-noise rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub sizes: Vec<usize>,
    /// Row-major K × K probabilities.
    pub link_prob: Vec<Vec<f64>>,
    /// Probability of flipping each drawn value, in [0, 0.5).
    pub noise: f64,
    pub seed: u64,
}

/// Default noise rate of the three-cluster preset.
pub const DEFAULT_NOISE: f64 = 0.05;

impl BlockSpec {
    /// 200 objects in three clusters: clusters 0 and 1 internally dense,
    /// cluster 2 internally empty but fully linked with cluster 0 in both directions.
    pub fn three_cluster_preset(noise: f64, seed: u64) -> Self {
        Self {
            sizes: vec![67, 67, 66],
            link_prob: vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]],
            noise,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let k = self.sizes.len();
        if k == 0 || self.sizes.contains(&0) {
            return Err(SynthError::Spec("cluster sizes must be positive".into()));
        }
        if self.link_prob.len() != k || self.link_prob.iter().any(|r| r.len() != k) {
            return Err(SynthError::Spec(format!("link_prob must be {k}x{k}")));
        }
        if self.link_prob.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SynthError::Spec("link probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(SynthError::Spec("noise must lie in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Planted label of each object, clusters laid out contiguously.
    pub fn labels(&self) -> Vec<usize> {
        self.sizes.iter().enumerate().flat_map(|(c, &size)| std::iter::repeat_n(c, size)).collect()
    }
}

/// Draws a fully observed relation without self-pairs.
///
/// Each ordered pair `i ≠ j` (row-major) draws its value from the block
/// probability, then a flip with probability `noise`.
pub fn generate(spec: &BlockSpec) -> Result<(RelationData, Vec<usize>), SynthError> {
    spec.check()?;
    let labels = spec.labels();
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let link: f64 = rng.random();
            let flip: f64 = rng.random();
            let s = link < spec.link_prob[labels[i]][labels[j]];
            entries.push(Entry::new(i, j, s ^ (flip < spec.noise)));
        }
    }
    let data = RelationData::from_entries(n, entries, true).expect("generated entries are valid");
    Ok((data, labels))
}

/// Training data plus held-out labelled pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: RelationData,
    /// Held-out entries sorted by `(i, j)`.
    pub test: Vec<Entry>,
}

/// Moves `round(holdout_frac · |entries|)` uniformly chosen entries to the test set.
/// Held-out pairs are removed from the training mask.
pub fn split(data: &RelationData, holdout_frac: f64, seed: u64) -> Result<Split, SynthError> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return Err(SynthError::HoldoutFraction(holdout_frac));
    }
    let total = data.len();
    let test_size = (holdout_frac * total as f64).round() as usize;
    if test_size >= total {
        return Err(SynthError::EmptyTrain { test: test_size, total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; total];
    for idx in rand::seq::index::sample(&mut rng, total, test_size) {
        held[idx] = true;
    }
    let mut train = Vec::with_capacity(total - test_size);
    let mut test = Vec::with_capacity(test_size);
    for (e, &h) in data.entries().iter().zip(&held) {
        if h {
            test.push(*e);
        } else {
            train.push(*e);
        }
    }
    let train = RelationData::from_entries(data.n(), train, data.directed()).expect("subset of valid data");
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_layout() {
        let spec = BlockSpec::three_cluster_preset(DEFAULT_NOISE, 1);
        assert_eq!(spec.n(), 200);
        let labels = spec.labels();
        assert_eq!(labels[66], 0);
        assert_eq!(labels[67], 1);
        assert_eq!(labels[199], 2);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = BlockSpec::three_cluster_preset(0.0, 1);
        spec.noise = 0.5;
        assert!(spec.check().is_err());
        let mut spec = BlockSpec::three_cluster_preset(0.0, 1);
        spec.link_prob[0][1] = 1.5;
        assert!(spec.check().is_err());
        let mut spec = BlockSpec::three_cluster_preset(0.0, 1);
        spec.sizes.push(0);
        assert!(spec.check().is_err());
    }

    #[test]
    fn split_sizes_and_errors() {
        let triples: Vec<_> = (0..100).map(|k| (k / 10, k % 10, (k % 3 == 0) as i64)).collect();
        let data = RelationData::from_triples(10, &triples, true).unwrap();
        let sp = split(&data, 0.1, 3).unwrap();
        assert_eq!(sp.test.len(), 10);
        assert_eq!(sp.train.len(), 90);
        assert!(matches!(split(&data, 0.0, 3), Err(SynthError::HoldoutFraction(_))));
        let tiny = RelationData::from_triples(2, &[(0, 1, 1)], true).unwrap();
        assert!(matches!(split(&tiny, 0.6, 3), Err(SynthError::EmptyTrain { .. })));
    }
}
