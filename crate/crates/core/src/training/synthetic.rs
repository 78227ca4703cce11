//! Synthetic, linearly separable QA-evaluation data for desk-scale runs.
//!
//! Labels come from a lexical oracle: an answer is correct iff it shares at
//! least [`ORACLE_MIN_SHARED`] content tokens with one positive reference.
//! Correct targets copy 3–5 content words from a positive reference; incorrect
//! targets copy 2–4 words from a negative reference (never words that occur in
//! any positive reference). The rest of each target is fresh vocabulary.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, QAExample, Reference, Split};
use crate::rng::Stream;

pub const ORACLE_MIN_SHARED: usize = 3;
pub const STOPWORDS: [&str; 6] = ["the", "of", "a", "is", "in", "what"];
pub const SYNTHETIC_NAME: &str = "synthetic";

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "ze", "bo", "di", "fa", "gu", "he", "jo", "ly", "mo", "ni",
    "qu",
];
const TARGET_WORDS: usize = 7;
const REF_WORDS: usize = 7;
const QUESTION_WORDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub vocab_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 13,
            n_train: 500,
            n_dev: 200,
            n_test: 200,
            vocab_size: 400,
        }
    }
}

fn word(i: usize) -> String {
    format!(
        "{}{}{}",
        SYLLABLES[i % 20],
        SYLLABLES[(i / 20) % 20],
        SYLLABLES[(i / 400) % 20]
    )
}

/// Lowercased, punctuation-trimmed tokens that are not stopwords.
pub fn content_tokens(text: &str) -> HashSet<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// 1 iff the target shares at least three content tokens with some positive
/// reference.
pub fn overlap_oracle(ex: &QAExample) -> u8 {
    let target = content_tokens(&ex.target_answer);
    let best = ex
        .pos_refs
        .iter()
        .map(|r| content_tokens(&r.text).intersection(&target).count())
        .max()
        .unwrap_or(0);
    u8::from(best >= ORACLE_MIN_SHARED)
}

fn sentence(words: &[String]) -> String {
    let mut parts = Vec::with_capacity(words.len() + 2);
    for (i, w) in words.iter().enumerate() {
        if i == 2 {
            parts.push("of".to_string());
        }
        parts.push(w.clone());
    }
    format!("the {}.", parts.join(" "))
}

fn draw_words(rng: &mut Stream, vocab: usize, n: usize, exclude: &HashSet<usize>) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut used: HashSet<usize> = HashSet::new();
    while out.len() < n {
        let w = rng.below(vocab);
        if !exclude.contains(&w) && used.insert(w) {
            out.push(w);
        }
    }
    out
}

fn make_example(spec: &SyntheticSpec, split: Split, idx: usize) -> QAExample {
    let example_id = format!("{SYNTHETIC_NAME}-{split}-{idx:04}");
    let mut rng = Stream::new(spec.seed, &example_id);
    let vocab = spec.vocab_size;
    let none = HashSet::new();

    let question_ids = draw_words(&mut rng, vocab, QUESTION_WORDS, &none);
    let n_pos = rng.range_inclusive(1, 3);
    let n_neg = rng.range_inclusive(1, 3);
    let pos_ids: Vec<Vec<usize>> = (0..n_pos).map(|_| draw_words(&mut rng, vocab, REF_WORDS, &none)).collect();
    let neg_ids: Vec<Vec<usize>> = (0..n_neg).map(|_| draw_words(&mut rng, vocab, REF_WORDS, &none)).collect();
    let in_pos: HashSet<usize> = pos_ids.iter().flatten().copied().collect();

    let correct = rng.below(2) == 1;
    let copied: Vec<usize> = if correct {
        let source = &pos_ids[rng.below(n_pos)];
        let c = rng.range_inclusive(3, 5);
        rng.sample_indices(source.len(), c).into_iter().map(|i| source[i]).collect()
    } else {
        let source = &neg_ids[rng.below(n_neg)];
        let eligible: Vec<usize> = source.iter().copied().filter(|w| !in_pos.contains(w)).collect();
        let c = rng.range_inclusive(2, 4).min(eligible.len());
        rng.sample_indices(eligible.len(), c).into_iter().map(|i| eligible[i]).collect()
    };
    let mut exclude: HashSet<usize> = question_ids.iter().copied().collect();
    exclude.extend(pos_ids.iter().flatten());
    exclude.extend(neg_ids.iter().flatten());
    let fresh = draw_words(&mut rng, vocab, TARGET_WORDS - copied.len(), &exclude);
    let mut target_ids = copied;
    target_ids.extend(fresh);
    rng.shuffle(&mut target_ids);

    let to_words = |ids: &[usize]| ids.iter().map(|&i| word(i)).collect::<Vec<_>>();
    let q_words = to_words(&question_ids);
    let mut ex = QAExample {
        example_id,
        question: format!("what {}?", q_words.join(" ")),
        target_answer: sentence(&to_words(&target_ids)),
        label: 0,
        pos_refs: pos_ids
            .iter()
            .map(|ids| Reference::positive(sentence(&to_words(ids))).expect("non-empty"))
            .collect(),
        neg_refs: neg_ids
            .iter()
            .map(|ids| Reference::negative(sentence(&to_words(ids))).expect("non-empty"))
            .collect(),
        dataset_name: SYNTHETIC_NAME.to_string(),
        split,
    };
    ex.label = overlap_oracle(&ex);
    ex
}

/// All three splits in one dataset, ordered train, dev, test.
pub fn generate(spec: &SyntheticSpec) -> Dataset {
    assert!(
        (TARGET_WORDS + 3 * REF_WORDS * 2 + QUESTION_WORDS..=8000).contains(&spec.vocab_size),
        "vocab_size out of range"
    );
    let mut examples = Vec::with_capacity(spec.n_train + spec.n_dev + spec.n_test);
    for (split, n) in [(Split::Train, spec.n_train), (Split::Dev, spec.n_dev), (Split::Test, spec.n_test)] {
        examples.extend((0..n).map(|i| make_example(spec, split, i)));
    }
    let mut d = Dataset::new(SYNTHETIC_NAME, examples).expect("ids are unique");
    d.provenance.insert("adapter".into(), "synthetic".into());
    d.provenance.insert("seed".into(), spec.seed.to_string());
    d
}

/// Distinct vocabulary used by a dataset; handy for sanity checks.
pub fn vocabulary(d: &Dataset) -> BTreeSet<String> {
    d.examples
        .iter()
        .flat_map(|e| content_tokens(&e.target_answer))
        .collect()
}
