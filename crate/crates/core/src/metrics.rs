//! Ranking and calibration metrics for binary click prediction.

use crate::error::{Error, Result};

/// Probabilities are clamped to `[LOG_LOSS_EPS, 1 - LOG_LOSS_EPS]` before taking logs.
pub const LOG_LOSS_EPS: f64 = 1e-12;

/// Model scores paired with binary labels.
#[derive(Debug, Clone, Copy)]
pub struct ScoredLabels<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
}

impl<'a> ScoredLabels<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidInput("scores must not be NaN".into()));
        }
        Ok(ScoredLabels { scores, labels })
    }
}

/// Area under the ROC curve as the Mann-Whitney rank statistic.
///
/// Scores are sorted once; tied groups receive their average rank, which
/// counts every tied positive/negative pair as one half.
pub fn auc(data: ScoredLabels<'_>) -> Result<f64> {
    let n = data.scores.len();
    let positives = data.labels.iter().filter(|&&y| y == 1).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));

    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && data.scores[order[j]] == data.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&o| data.labels[o] == 1).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }

    let p = positives as f64;
    let q = negatives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Mean negative log-likelihood of the labels under the predicted probabilities.
pub fn log_loss(data: ScoredLabels<'_>) -> Result<f64> {
    if data.scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = data
        .scores
        .iter()
        .zip(data.labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / data.scores.len() as f64)
}
