//! Link-prediction and clustering metrics.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Entry, SideInfo};
use crate::linalg::Matrix;
use crate::model::{self, clamped_log_prob, sigmoid, ModelError};
use crate::scalar::Scalar;
use crate::state::LatentState;

/// Largest object count [`reconstruct`] will materialize.
pub const MAX_DENSE_N: usize = 5000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("scores and labels have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("labels need at least one positive and one negative")]
    DegenerateLabels,
    #[error("score {0} is not finite")]
    NonFiniteScore(usize),
    #[error("labelings must be non-empty")]
    Empty,
    #[error("{n} objects exceeds the dense reconstruction limit of {MAX_DENSE_N}")]
    TooLarge { n: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_scores<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(idx) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(idx));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    Ok((pos, neg))
}

fn cmp_scores<T: Scalar>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).expect("finite scores")
}

/// Mann–Whitney AUC: `P(score⁺ > score⁻) + ½ P(score⁺ = score⁻)`.
pub fn auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp_scores(scores[a], scores[b]));
    // Twice the positive rank sum, with tied groups sharing the mean rank.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_pos = order[start..end].iter().filter(|&&k| labels[k]).count() as u128;
        // ranks start+1 ..= end, mean (start + 1 + end) / 2
        twice_rank_sum += group_pos * (start as u128 + 1 + end as u128);
        start = end;
    }
    let (p, q) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * p as f64 * q as f64))
}

/// ROC points from a descending threshold sweep, from (0, 0) to (1, 1).
/// Tied scores form a single step.
pub fn roc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp_scores(scores[b], scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            if labels[order[end]] {
                tp += 1;
            } else {
                fp += 1;
            }
            end += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        start = end;
    }
    Ok(points)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5).sum()
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization, natural logs.
/// Zero when both labelings are constant.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    let denom = 0.5 * (ha + hb);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let c = c as f64;
            (c / n) * (n * c / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Row-wise argmax of a factor matrix; ties go to the lowest column.
pub fn factor_labels<T: Scalar>(factors: &Matrix<T>) -> Vec<usize> {
    (0..factors.rows())
        .map(|r| {
            let row = factors.row(r);
            let mut best = 0;
            for (c, &x) in row.iter().enumerate().skip(1) {
                if x > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Dense matrix of predicted link probabilities `σ(H_ij)`.
pub fn reconstruct<T: Scalar>(
    state: &LatentState<T>,
    side: Option<&SideInfo<T>>,
) -> Result<Matrix<T>, EvalError> {
    let n = state.n();
    if n > MAX_DENSE_N {
        return Err(EvalError::TooLarge { n });
    }
    state.check().map_err(ModelError::from)?;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = sigmoid(model::logit(state, i, j, side)?);
        }
    }
    Ok(out)
}

/// Metrics for a fitted state on held-out pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub roc: Vec<(f64, f64)>,
    pub nmi: Option<f64>,
    /// Mean clamped Bernoulli log-probability per held-out entry.
    pub holdout_log_likelihood: f64,
}

/// AUC/ROC and held-out likelihood on `test`, plus NMI against `planted` when given.
pub fn evaluate<T: Scalar>(
    state: &LatentState<T>,
    test: &[Entry],
    side: Option<&SideInfo<T>>,
    planted: Option<&[usize]>,
) -> Result<EvalReport, EvalError> {
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    let mut loglik = 0.0;
    for e in test {
        let h = model::logit(state, e.i, e.j, side)?;
        scores.push(sigmoid(h));
        labels.push(e.s);
        loglik += clamped_log_prob(e.s, h).to_f64_lossy();
    }
    let nmi = planted.map(|p| nmi(&state.z, p)).transpose()?;
    Ok(EvalReport {
        auc: auc(&scores, &labels)?,
        roc: roc(&scores, &labels)?,
        nmi,
        holdout_log_likelihood: loglik / test.len() as f64,
    })
}
