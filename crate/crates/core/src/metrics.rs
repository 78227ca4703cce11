//! Agreement statistics between metric scores and gold labels.
//!
//! Undefined cases (single-class AUROC, zero-variance correlation) are typed
//! errors; no function here returns NaN.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("scored set is empty")]
    Empty,
    #[error("length mismatch: {scores} scores, {labels} labels, {ids} ids")]
    LengthMismatch { scores: usize, labels: usize, ids: usize },
    #[error("score {score} for {example_id:?} is outside [0, 1]")]
    ScoreOutOfRange { example_id: String, score: f64 },
    #[error("label {label} for {example_id:?} is not 0 or 1")]
    BadLabel { example_id: String, label: u8 },
    #[error("AUROC undefined: labels contain a single class")]
    SingleClass,
    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("relative delta needs a positive baseline, got {0}")]
    NonPositiveBaseline(f64),
}

/// Parallel scores, labels and example ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
    example_ids: Vec<String>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, example_ids: Vec<String>) -> Result<Self, MetricError> {
        if scores.len() != labels.len() || scores.len() != example_ids.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
                ids: example_ids.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricError::Empty);
        }
        for ((&score, &label), id) in scores.iter().zip(&labels).zip(&example_ids) {
            if !(0.0..=1.0).contains(&score) {
                return Err(MetricError::ScoreOutOfRange {
                    example_id: id.clone(),
                    score,
                });
            }
            if label > 1 {
                return Err(MetricError::BadLabel {
                    example_id: id.clone(),
                    label,
                });
            }
        }
        Ok(Self {
            scores,
            labels,
            example_ids,
        })
    }

    /// Ids are generated as `"0"`, `"1"`, ...
    pub fn from_pairs(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricError> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        Self::new(scores, labels, ids)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn example_ids(&self) -> &[String] {
        &self.example_ids
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Fraction of examples where `score >= threshold` agrees with the label.
pub fn accuracy(s: &ScoredSet, threshold: f64) -> f64 {
    let hits = s
        .scores
        .iter()
        .zip(&s.labels)
        .filter(|(&score, &label)| (score >= threshold) == (label == 1))
        .count();
    hits as f64 / s.len() as f64
}

/// Mann–Whitney AUROC via midranks; tied pairs count one half.
pub fn auroc(s: &ScoredSet) -> Result<f64, MetricError> {
    let n_pos = s.labels.iter().filter(|&&l| l == 1).count();
    let n_neg = s.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].partial_cmp(&s.scores[b]).unwrap_or(Ordering::Equal));

    // Ranks are 1-based; a tie block spanning ranks i+1..=j gets (i+1+j)/2.
    // Summed as twice the rank to stay in integers.
    let mut twice_rank_sum_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && s.scores[order[j]] == s.scores[order[i]] {
            j += 1;
        }
        let twice_midrank = (i + 1 + j) as u64;
        let pos_in_block = order[i..j].iter().filter(|&&k| s.labels[k] == 1).count() as u64;
        twice_rank_sum_pos += twice_midrank * pos_in_block;
        i = j;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let twice_u = twice_rank_sum_pos - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Sample Pearson correlation between scores and binary labels.
pub fn pearson(s: &ScoredSet) -> Result<f64, MetricError> {
    let n = s.len() as f64;
    let labels: Vec<f64> = s.labels.iter().map(|&l| f64::from(l)).collect();
    let mean_x = s.scores.iter().sum::<f64>() / n;
    let mean_y = labels.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in s.scores.iter().zip(&labels) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return Err(MetricError::ZeroVariance("scores"));
    }
    if syy <= 0.0 {
        return Err(MetricError::ZeroVariance("labels"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `100 * (candidate - baseline) / baseline`.
pub fn relative_delta(candidate: f64, baseline: f64) -> Result<f64, MetricError> {
    if baseline <= 0.0 || baseline.is_nan() {
        return Err(MetricError::NonPositiveBaseline(baseline));
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

/// Accuracy, AUROC and correlation for one scored set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub accuracy: f64,
    pub auroc: f64,
    pub correlation: f64,
}

impl MetricValues {
    pub fn compute(s: &ScoredSet) -> Result<Self, MetricError> {
        Ok(Self {
            accuracy: accuracy(s, DEFAULT_THRESHOLD),
            auroc: auroc(s)?,
            correlation: pearson(s)?,
        })
    }

    /// Per-metric relative deltas against `baseline`.
    pub fn relative_to(&self, baseline: &MetricValues) -> Result<MetricDeltas, MetricError> {
        Ok(MetricDeltas {
            accuracy: relative_delta(self.accuracy, baseline.accuracy)?,
            auroc: relative_delta(self.auroc, baseline.auroc)?,
            correlation: relative_delta(self.correlation, baseline.correlation)?,
        })
    }
}

/// Signed percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub accuracy: f64,
    pub auroc: f64,
    pub correlation: f64,
}
