//! Desk-scale backbone: a signed hashed bag of tokens plus lexical alignment
//! features, mean-pooled, with no trainable weights.
//!
//! The encoded string is split on whitespace; tag tokens (`Question:`,
//! `Target:`, `Pos_Ref:`, `Neg_Ref:`) open a new segment. Every other token is
//! lowercased, stripped of surrounding punctuation and hashed together with
//! its segment role (FNV-1a 64) into one of `dim - ALIGN_DIMS` buckets with a
//! ±1 sign; those buckets hold the mean over all token features.
//!
//! The last `ALIGN_DIMS` coordinates measure how much of the target's
//! vocabulary reappears elsewhere, each as a fraction of distinct target
//! tokens:
//!
//! | slot | overlap of target tokens with      |
//! |------|------------------------------------|
//! | 0    | union of positive references       |
//! | 1    | union of negative references       |
//! | 2    | the question                       |
//! | 3    | best single positive reference     |
//! | 4    | best single negative reference     |
//!
//! A linear head over bag-of-words alone cannot see agreement between the
//! target and a reference; the alignment slots give it that signal.

use std::collections::HashSet;

use super::backbone::{Backbone, BackboneSpec};
use super::ScorerError;
use crate::encoding::{NEG_REF_TAG, POS_REF_TAG, QUESTION_TAG, TARGET_TAG};
use crate::rng::fnv1a64;

pub const TOY_BACKBONE_NAME: &str = "toy-hashed-bag";
pub const TOY_DIM: usize = 64;
pub const ALIGN_DIMS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Preamble,
    Question,
    Target,
    PosRef,
    NegRef,
}

impl Role {
    fn key(self) -> &'static str {
        match self {
            Role::Preamble => "pre",
            Role::Question => "q",
            Role::Target => "t",
            Role::PosRef => "p",
            Role::NegRef => "n",
        }
    }
}

#[derive(Debug, Default)]
struct Segments {
    tokens: Vec<(Role, String)>,
    question: HashSet<String>,
    target: HashSet<String>,
    pos: Vec<HashSet<String>>,
    neg: Vec<HashSet<String>>,
}

fn normalize_token(tok: &str) -> String {
    tok.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn segment(text: &str) -> Segments {
    let mut seg = Segments::default();
    let mut role = Role::Preamble;
    for raw in text.split_whitespace() {
        let next = match raw {
            QUESTION_TAG => Some(Role::Question),
            TARGET_TAG => Some(Role::Target),
            POS_REF_TAG => Some(Role::PosRef),
            NEG_REF_TAG => Some(Role::NegRef),
            _ => None,
        };
        if let Some(r) = next {
            role = r;
            match r {
                Role::PosRef => seg.pos.push(HashSet::new()),
                Role::NegRef => seg.neg.push(HashSet::new()),
                _ => {}
            }
            continue;
        }
        let tok = normalize_token(raw);
        if tok.is_empty() {
            continue;
        }
        match role {
            Role::Question => {
                seg.question.insert(tok.clone());
            }
            Role::Target => {
                seg.target.insert(tok.clone());
            }
            Role::PosRef => {
                seg.pos.last_mut().expect("opened on tag").insert(tok.clone());
            }
            Role::NegRef => {
                seg.neg.last_mut().expect("opened on tag").insert(tok.clone());
            }
            Role::Preamble => {}
        }
        seg.tokens.push((role, tok));
    }
    seg
}

#[derive(Debug, Clone)]
pub struct HashedBagBackbone {
    dim: usize,
}

impl HashedBagBackbone {
    pub fn new(dim: usize) -> Result<Self, ScorerError> {
        if dim <= ALIGN_DIMS {
            return Err(ScorerError::Backbone(format!(
                "toy backbone dimension must exceed {ALIGN_DIMS}, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn from_spec(spec: &BackboneSpec) -> Result<Self, ScorerError> {
        let dim = match spec.params.get("dim") {
            None => TOY_DIM,
            Some(d) => d
                .parse()
                .map_err(|_| ScorerError::Backbone(format!("bad toy dim {d:?}")))?,
        };
        Self::new(dim)
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let seg = segment(text);
        let buckets = self.dim - ALIGN_DIMS;
        let mut v = vec![0.0f64; self.dim];
        if !seg.tokens.is_empty() {
            let w = 1.0 / seg.tokens.len() as f64;
            for (role, tok) in &seg.tokens {
                let mut key = Vec::with_capacity(tok.len() + 4);
                key.extend_from_slice(role.key().as_bytes());
                key.push(0x1f);
                key.extend_from_slice(tok.as_bytes());
                let h = fnv1a64(&key);
                let bucket = (h % buckets as u64) as usize;
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                v[bucket] += sign * w;
            }
        }
        if !seg.target.is_empty() {
            let n = seg.target.len() as f64;
            let overlap = |other: &HashSet<String>| seg.target.intersection(other).count() as f64 / n;
            let union = |refs: &[HashSet<String>]| {
                let all: HashSet<String> = refs.iter().flatten().cloned().collect();
                overlap(&all)
            };
            let best = |refs: &[HashSet<String>]| refs.iter().map(overlap).fold(0.0, f64::max);
            v[buckets] = union(&seg.pos);
            v[buckets + 1] = union(&seg.neg);
            v[buckets + 2] = overlap(&seg.question);
            v[buckets + 3] = best(&seg.pos);
            v[buckets + 4] = best(&seg.neg);
        }
        v.into_iter().map(|x| x as f32).collect()
    }
}

impl Default for HashedBagBackbone {
    fn default() -> Self {
        Self { dim: TOY_DIM }
    }
}

impl Backbone for HashedBagBackbone {
    fn name(&self) -> &str {
        TOY_BACKBONE_NAME
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ScorerError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }

    fn spec(&self) -> BackboneSpec {
        let mut spec = BackboneSpec::default();
        if self.dim != TOY_DIM {
            spec.params.insert("dim".into(), self.dim.to_string());
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_and_determinism() {
        let b = HashedBagBackbone::default();
        let text = "Question: who? Target: red fox jumps Pos_Ref: the red fox Neg_Ref: blue fox";
        let a = b.embed(text);
        assert_eq!(a.len(), 64);
        assert_eq!(a, b.embed(text));
    }

    #[test]
    fn alignment_slots() {
        let b = HashedBagBackbone::default();
        let v = b.embed("Question: who? Target: red fox jumps Pos_Ref: the red fox Pos_Ref: red Neg_Ref: blue fox");
        let base = 64 - ALIGN_DIMS;
        assert!((v[base] - 2.0 / 3.0).abs() < 1e-6);
        assert!((v[base + 1] - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(v[base + 2], 0.0);
        assert!((v[base + 3] - 2.0 / 3.0).abs() < 1e-6);
        assert!((v[base + 4] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn unigram_mass_is_mean_pooled() {
        let b = HashedBagBackbone::default();
        let v = b.embed("Target: alpha beta gamma delta");
        let l1: f32 = v[..64 - ALIGN_DIMS].iter().map(|x| x.abs()).sum();
        assert!(l1 <= 1.0 + 1e-6);
        assert!(l1 > 0.0);
    }

    #[test]
    fn spec_round_trip() {
        let b = HashedBagBackbone::new(32).unwrap();
        let again = HashedBagBackbone::from_spec(&b.spec()).unwrap();
        assert_eq!(again.dim(), 32);
        assert!(HashedBagBackbone::new(3).is_err());
    }
}
