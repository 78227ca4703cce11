//! Serialization of `(question, target, references)` into one text sequence.
//!
//! Grammar:
//!
//! ```text
//! "Question: " q " Target: " a {" Pos_Ref: " ref} {" Neg_Ref: " ref}
//! ```
//!
//! QT drops every reference, TR drops the question and keeps one reference,
//! TQR keeps all three parts with one reference. All field text is
//! whitespace-normalized before insertion.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QAExample;
use crate::reference_selection::{
    restrict_polarity, select_from_pools, PolarityFilter, Selection, SelectionPolicy,
};

pub const QUESTION_TAG: &str = "Question:";
pub const TARGET_TAG: &str = "Target:";
pub const POS_REF_TAG: &str = "Pos_Ref:";
pub const NEG_REF_TAG: &str = "Neg_Ref:";
pub const TAGS: [&str; 4] = [QUESTION_TAG, TARGET_TAG, POS_REF_TAG, NEG_REF_TAG];

pub const DEFAULT_MAX_UNITS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VariantKind {
    Square,
    Qt,
    Tr,
    Tqr,
}

/// Input layout plus the reference polarity it admits.
///
/// `TQR` restricted to negatives is the single-negative-reference baseline;
/// `SQUARE` restricted to positives is the positives-only ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodingVariant {
    pub kind: VariantKind,
    pub keep: PolarityFilter,
}

impl EncodingVariant {
    pub const fn new(kind: VariantKind, keep: PolarityFilter) -> Self {
        Self { kind, keep }
    }

    pub const fn square() -> Self {
        Self::new(VariantKind::Square, PolarityFilter::Both)
    }

    pub const fn square_pos() -> Self {
        Self::new(VariantKind::Square, PolarityFilter::PositiveOnly)
    }

    pub const fn qt() -> Self {
        Self::new(VariantKind::Qt, PolarityFilter::Both)
    }

    pub const fn tr() -> Self {
        Self::new(VariantKind::Tr, PolarityFilter::Both)
    }

    pub const fn tqr() -> Self {
        Self::new(VariantKind::Tqr, PolarityFilter::Both)
    }

    pub const fn tqr_neg() -> Self {
        Self::new(VariantKind::Tqr, PolarityFilter::NegativeOnly)
    }

    pub fn uses_question(&self) -> bool {
        self.kind != VariantKind::Tr
    }

    pub fn uses_target(&self) -> bool {
        true
    }

    /// `None` means unbounded.
    pub fn max_refs_used(&self) -> Option<usize> {
        match self.kind {
            VariantKind::Qt => Some(0),
            VariantKind::Tr | VariantKind::Tqr => Some(1),
            VariantKind::Square => None,
        }
    }

    /// Polarity of the single reference used by TR/TQR.
    fn single_ref_is_negative(&self) -> bool {
        self.keep == PolarityFilter::NegativeOnly
    }
}

impl fmt::Display for EncodingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.kind {
            VariantKind::Square => "SQUARE",
            VariantKind::Qt => "QT",
            VariantKind::Tr => "TR",
            VariantKind::Tqr => "TQR",
        };
        match self.keep {
            PolarityFilter::Both => f.write_str(base),
            PolarityFilter::PositiveOnly => write!(f, "{base}_POS"),
            PolarityFilter::NegativeOnly => write!(f, "{base}_NEG"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub text: String,
    pub variant: EncodingVariant,
    /// Some references were dropped to fit the unit budget.
    pub truncated: bool,
    /// An input field contained one of the tag literals.
    pub tag_collision: bool,
    pub n_refs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{variant} needs a {polarity} reference but the pool is empty{}", fmt_example(.example_id))]
    MissingReference {
        variant: EncodingVariant,
        polarity: &'static str,
        example_id: Option<String>,
    },
    #[error("{field} is empty after normalization{}", fmt_example(.example_id))]
    EmptyField {
        field: &'static str,
        example_id: Option<String>,
    },
    #[error("max_units must be positive")]
    ZeroBudget,
}

fn fmt_example(id: &Option<String>) -> String {
    id.as_ref().map(|id| format!(" (example {id})")).unwrap_or_default()
}

impl EncodeError {
    fn with_example(self, id: &str) -> Self {
        let id = Some(id.to_string());
        match self {
            EncodeError::MissingReference { variant, polarity, .. } => EncodeError::MissingReference {
                variant,
                polarity,
                example_id: id,
            },
            EncodeError::EmptyField { field, .. } => EncodeError::EmptyField { field, example_id: id },
            other => other,
        }
    }
}

/// Collapse whitespace runs and trim.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn contains_tag(text: &str) -> bool {
    TAGS.iter().any(|t| text.contains(t))
}

fn unit_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Encodes one input. `max_units` bounds the whitespace-token count of the
/// output; whole references are dropped from the end until it fits, while
/// question and target are always kept.
pub fn encode<S: AsRef<str>>(
    question: &str,
    target: &str,
    pos: &[S],
    neg: &[S],
    variant: EncodingVariant,
    max_units: usize,
) -> Result<EncodedInput, EncodeError> {
    if max_units == 0 {
        return Err(EncodeError::ZeroBudget);
    }
    let target_n = normalize_ws(target);
    if target_n.is_empty() {
        return Err(EncodeError::EmptyField {
            field: "target",
            example_id: None,
        });
    }
    let question_n = normalize_ws(question);
    if variant.uses_question() && question_n.is_empty() {
        return Err(EncodeError::EmptyField {
            field: "question",
            example_id: None,
        });
    }
    let keep_pos = variant.keep != PolarityFilter::NegativeOnly;
    let keep_neg = variant.keep != PolarityFilter::PositiveOnly;
    let norm_pool = |pool: &[S], keep: bool| -> Result<Vec<String>, EncodeError> {
        if !keep {
            return Ok(Vec::new());
        }
        pool.iter()
            .map(|r| {
                let r = normalize_ws(r.as_ref());
                if r.is_empty() {
                    Err(EncodeError::EmptyField {
                        field: "reference",
                        example_id: None,
                    })
                } else {
                    Ok(r)
                }
            })
            .collect()
    };
    let pos_n = norm_pool(pos, keep_pos)?;
    let neg_n = norm_pool(neg, keep_neg)?;

    let mut refs: Vec<(&str, &str)> = Vec::new();
    match variant.kind {
        VariantKind::Qt => {}
        VariantKind::Square => {
            refs.extend(pos_n.iter().map(|r| (POS_REF_TAG, r.as_str())));
            refs.extend(neg_n.iter().map(|r| (NEG_REF_TAG, r.as_str())));
        }
        VariantKind::Tr | VariantKind::Tqr => {
            let (tag, pool, polarity) = if variant.single_ref_is_negative() {
                (NEG_REF_TAG, &neg_n, "negative")
            } else {
                (POS_REF_TAG, &pos_n, "positive")
            };
            let first = pool.first().ok_or(EncodeError::MissingReference {
                variant,
                polarity,
                example_id: None,
            })?;
            refs.push((tag, first.as_str()));
        }
    }

    let mut head = Vec::with_capacity(4);
    if variant.uses_question() {
        head.push(QUESTION_TAG);
        head.push(question_n.as_str());
    }
    head.push(TARGET_TAG);
    head.push(target_n.as_str());
    let head_units: usize = head.iter().map(|s| unit_count(s)).sum();
    let ref_units: Vec<usize> = refs.iter().map(|(_, r)| 1 + unit_count(r)).collect();

    let mut kept = refs.len();
    let mut units = head_units + ref_units.iter().sum::<usize>();
    while units > max_units && kept > 0 {
        kept -= 1;
        units -= ref_units[kept];
    }
    let truncated = kept < refs.len();

    let mut parts = head;
    for (tag, r) in &refs[..kept] {
        parts.push(tag);
        parts.push(r);
    }
    let tag_collision = contains_tag(&question_n)
        || contains_tag(&target_n)
        || pos_n.iter().chain(&neg_n).any(|r| contains_tag(r));

    Ok(EncodedInput {
        text: parts.join(" "),
        variant,
        truncated,
        tag_collision,
        n_refs: kept,
    })
}

/// The selection policy actually applied for a variant: single-reference
/// layouts sample exactly one reference.
pub fn effective_policy(variant: EncodingVariant, policy: &SelectionPolicy) -> SelectionPolicy {
    match variant.max_refs_used() {
        Some(m) => SelectionPolicy {
            total_budget: m.max(1),
            mode: crate::reference_selection::SelectionMode::FixedK,
            ..policy.clone()
        },
        None => policy.clone(),
    }
}

/// Restricts pools to the variant's polarity, samples references with the
/// policy and encodes the example.
pub fn encode_example(
    ex: &QAExample,
    variant: EncodingVariant,
    policy: &SelectionPolicy,
    max_units: usize,
) -> Result<EncodedInput, EncodeError> {
    let selection = if variant.kind == VariantKind::Qt {
        Selection::default()
    } else {
        let pools = restrict_polarity(Selection::from_pools(ex), variant.keep);
        select_from_pools(&pools, &ex.example_id, &effective_policy(variant, policy))
    };
    let pos: Vec<&str> = selection.pos.iter().map(|r| r.text.as_str()).collect();
    let neg: Vec<&str> = selection.neg.iter().map(|r| r.text.as_str()).collect();
    encode(&ex.question, &ex.target_answer, &pos, &neg, variant, max_units)
        .map_err(|e| e.with_example(&ex.example_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: &str = "Who wrote Hamlet?";
    const A: &str = "Shakespeare did.";
    const P: &[&str] = &["Hamlet is by Shakespeare."];
    const N: &[&str] = &["Hamlet is a village."];

    #[test]
    fn square_layout() {
        let e = encode(Q, A, P, N, EncodingVariant::square(), DEFAULT_MAX_UNITS).unwrap();
        assert_eq!(
            e.text,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare. Neg_Ref: Hamlet is a village."
        );
        assert!(!e.truncated);
        assert_eq!(e.n_refs, 2);
    }

    #[test]
    fn qt_layout() {
        let e = encode(Q, A, P, N, EncodingVariant::qt(), DEFAULT_MAX_UNITS).unwrap();
        assert_eq!(e.text, "Question: Who wrote Hamlet? Target: Shakespeare did.");
    }

    #[test]
    fn square_with_empty_pools_matches_qt_surface() {
        let none: &[&str] = &[];
        let e = encode(Q, A, none, none, EncodingVariant::square(), DEFAULT_MAX_UNITS).unwrap();
        assert_eq!(e.text, "Question: Who wrote Hamlet? Target: Shakespeare did.");
        assert!(!e.truncated);
    }

    #[test]
    fn tr_requires_a_positive() {
        let none: &[&str] = &[];
        let err = encode(Q, A, none, N, EncodingVariant::tr(), DEFAULT_MAX_UNITS).unwrap_err();
        assert!(matches!(err, EncodeError::MissingReference { polarity: "positive", .. }));
        let err = encode(Q, A, P, none, EncodingVariant::tqr_neg(), DEFAULT_MAX_UNITS).unwrap_err();
        assert!(matches!(err, EncodeError::MissingReference { polarity: "negative", .. }));
    }

    #[test]
    fn truncation_drops_last_reference_first() {
        // head is 7 units, each reference 5
        let e = encode(Q, A, P, N, EncodingVariant::square(), 12).unwrap();
        assert!(e.truncated);
        assert_eq!(e.n_refs, 1);
        assert!(e.text.ends_with("Pos_Ref: Hamlet is by Shakespeare."));
        let e = encode(Q, A, P, N, EncodingVariant::square(), 3).unwrap();
        assert_eq!(e.text, "Question: Who wrote Hamlet? Target: Shakespeare did.");
        assert!(e.truncated);
    }

    #[test]
    fn whitespace_is_normalized_and_collisions_flagged() {
        let e = encode("  Who\twrote  it? ", "Target: me", P, N, EncodingVariant::qt(), 512).unwrap();
        assert_eq!(e.text, "Question: Who wrote it? Target: Target: me");
        assert!(e.tag_collision);
    }

    #[test]
    fn empty_target_is_an_error() {
        assert!(encode(Q, "  ", P, N, EncodingVariant::qt(), 512).is_err());
        assert_eq!(encode(Q, A, P, N, EncodingVariant::qt(), 0), Err(EncodeError::ZeroBudget));
    }

    #[test]
    fn variant_properties() {
        assert!(!EncodingVariant::tr().uses_question());
        assert_eq!(EncodingVariant::qt().max_refs_used(), Some(0));
        assert_eq!(EncodingVariant::square().max_refs_used(), None);
        assert_eq!(EncodingVariant::tqr_neg().to_string(), "TQR_NEG");
        assert_eq!(EncodingVariant::square_pos().to_string(), "SQUARE_POS");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn words() -> impl Strategy<Value = String> {
            prop::collection::vec("[a-z]{1,6}[.?]?", 1..6).prop_map(|w| w.join(" "))
        }

        /// Splits an encoded string back into its parts. Test-side parser,
        /// independent of the encoder.
        fn parse(text: &str) -> (Option<String>, String, Vec<String>, Vec<String>) {
            let mut question = None;
            let mut target = String::new();
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            let mut current: Option<&str> = None;
            let mut buf: Vec<&str> = Vec::new();
            let mut flush = |tag: Option<&str>, buf: &mut Vec<&str>| {
                let s = buf.join(" ");
                buf.clear();
                match tag {
                    Some("Question:") => question = Some(s),
                    Some("Target:") => target = s,
                    Some("Pos_Ref:") => pos.push(s),
                    Some("Neg_Ref:") => neg.push(s),
                    _ => {}
                }
            };
            for tok in text.split(' ') {
                if TAGS.contains(&tok) {
                    flush(current, &mut buf);
                    current = Some(tok);
                } else {
                    buf.push(tok);
                }
            }
            flush(current, &mut buf);
            (question, target, pos, neg)
        }

        proptest! {
            #[test]
            fn square_round_trips(q in words(), a in words(),
                                  pos in prop::collection::vec(words(), 0..4),
                                  neg in prop::collection::vec(words(), 0..4)) {
                let e = encode(&q, &a, &pos, &neg, EncodingVariant::square(), usize::MAX).unwrap();
                let (pq, pa, pp, pn) = parse(&e.text);
                prop_assert_eq!(pq, Some(q.clone()));
                prop_assert_eq!(pa, a.clone());
                prop_assert_eq!(pp, pos.clone());
                prop_assert_eq!(pn, neg.clone());
                prop_assert!(!e.tag_collision);
            }

            #[test]
            fn truncation_is_a_prefix_of_the_full_encoding(q in words(), a in words(),
                    pos in prop::collection::vec(words(), 0..4),
                    neg in prop::collection::vec(words(), 0..4),
                    budget in 1usize..40) {
                let full = encode(&q, &a, &pos, &neg, EncodingVariant::square(), usize::MAX).unwrap();
                let cut = encode(&q, &a, &pos, &neg, EncodingVariant::square(), budget).unwrap();
                prop_assert!(full.text.starts_with(&cut.text));
                prop_assert!(cut.text.contains(" Target: ") || cut.text.starts_with("Target: "));
                prop_assert_eq!(cut.truncated, cut.n_refs < pos.len() + neg.len());
                let again = encode(&q, &a, &pos, &neg, EncodingVariant::square(), usize::MAX).unwrap();
                prop_assert_eq!(again.text, full.text);
            }
        }
    }
}
