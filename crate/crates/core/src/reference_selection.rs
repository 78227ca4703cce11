//! Chooses which references accompany an example.
//!
//! Sampling for one example draws from the stream keyed by
//! `(policy.seed, example_id)`, in this order: the budget (random-range mode
//! only), then the positive subset, then the negative subset. Dataset order
//! therefore never affects what an example receives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QAExample, Reference};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    FixedK,
    RandomRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Up to ⌈k/2⌉ positives, the rest negatives, leftovers back to positives.
    Balanced,
    /// As many positives as fit, then negatives.
    PositivesFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionPolicy {
    pub total_budget: usize,
    pub mode: SelectionMode,
    pub range_low: usize,
    pub range_high: usize,
    pub split_rule: SplitRule,
    pub seed: u64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            total_budget: 5,
            mode: SelectionMode::FixedK,
            range_low: 1,
            range_high: 5,
            split_rule: SplitRule::Balanced,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("total_budget must be at least 1")]
    ZeroBudget,
    #[error("range_low ({low}) must be positive and not exceed range_high ({high})")]
    BadRange { low: usize, high: usize },
}

impl SelectionPolicy {
    pub fn fixed(k: usize) -> Self {
        Self {
            total_budget: k,
            ..Self::default()
        }
    }

    pub fn random_range(low: usize, high: usize) -> Self {
        Self {
            mode: SelectionMode::RandomRange,
            range_low: low,
            range_high: high,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.total_budget == 0 {
            return Err(PolicyError::ZeroBudget);
        }
        if self.range_low == 0 || self.range_low > self.range_high {
            return Err(PolicyError::BadRange {
                low: self.range_low,
                high: self.range_high,
            });
        }
        Ok(())
    }

    /// The "# Refs" column text: `"5"` or `"[1,5]"`.
    pub fn descriptor(&self) -> String {
        match self.mode {
            SelectionMode::FixedK => self.total_budget.to_string(),
            SelectionMode::RandomRange => format!("[{},{}]", self.range_low, self.range_high),
        }
    }
}

/// References chosen for one example.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub pos: Vec<Reference>,
    pub neg: Vec<Reference>,
}

impl Selection {
    pub fn from_pools(ex: &QAExample) -> Self {
        Self {
            pos: ex.pos_refs.clone(),
            neg: ex.neg_refs.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.pos.len() + self.neg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityFilter {
    PositiveOnly,
    NegativeOnly,
    Both,
}

pub fn restrict_polarity(sel: Selection, keep: PolarityFilter) -> Selection {
    match keep {
        PolarityFilter::Both => sel,
        PolarityFilter::PositiveOnly => Selection {
            pos: sel.pos,
            neg: Vec::new(),
        },
        PolarityFilter::NegativeOnly => Selection {
            pos: Vec::new(),
            neg: sel.neg,
        },
    }
}

/// How many positives and negatives to take for budget `k`.
pub fn split_counts(k: usize, n_pos: usize, n_neg: usize, rule: SplitRule) -> (usize, usize) {
    let first_pos = match rule {
        SplitRule::Balanced => n_pos.min(k.div_ceil(2)),
        SplitRule::PositivesFirst => n_pos.min(k),
    };
    let take_neg = n_neg.min(k - first_pos);
    let leftover = k - first_pos - take_neg;
    let take_pos = first_pos + leftover.min(n_pos - first_pos);
    (take_pos, take_neg)
}

/// Samples references from `pools` for the example identified by `example_id`.
pub fn select_from_pools(pools: &Selection, example_id: &str, policy: &SelectionPolicy) -> Selection {
    let mut rng = Stream::new(policy.seed, example_id);
    let k = match policy.mode {
        SelectionMode::FixedK => policy.total_budget,
        SelectionMode::RandomRange => rng.range_inclusive(policy.range_low, policy.range_high),
    };
    let (take_pos, take_neg) = split_counts(k, pools.pos.len(), pools.neg.len(), policy.split_rule);
    let pick = |rng: &mut Stream, pool: &[Reference], m: usize| -> Vec<Reference> {
        rng.sample_indices(pool.len(), m)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect()
    };
    let pos = pick(&mut rng, &pools.pos, take_pos);
    let neg = pick(&mut rng, &pools.neg, take_neg);
    Selection { pos, neg }
}

pub fn select_references(ex: &QAExample, policy: &SelectionPolicy) -> Selection {
    select_from_pools(&Selection::from_pools(ex), &ex.example_id, policy)
}
