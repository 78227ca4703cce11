//! Correctness scorer: a frozen backbone followed by a linear head and a
//! sigmoid, `p = σ(w · backbone(text) + b)`.

mod backbone;
mod checkpoint;
mod command;
mod toy;

use std::sync::Arc;

use thiserror::Error;

pub use backbone::{Backbone, BackboneRegistry, BackboneSpec};
pub use checkpoint::{load_checkpoint, load_checkpoint_with, save_checkpoint, CHECKPOINT_MAGIC};
pub use command::{CommandBackbone, COMMAND_BACKBONE_NAME};
pub use toy::{HashedBagBackbone, ALIGN_DIMS, TOY_BACKBONE_NAME, TOY_DIM};

use crate::encoding::EncodedInput;

/// Version tag written into checkpoints and carried by every model.
pub const MODEL_VERSION: &str = "square-linear-head/1";

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("backbone failure: {0}")]
    Backbone(String),
    #[error("no backbone registered under {0:?}")]
    UnknownBackbone(String),
    #[error("backbone produced {got} features, head expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input text is empty")]
    EmptyInput,
    #[error("batch_size must be at least 1")]
    ZeroBatch,
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("checkpoint version {found:?} does not match {expected:?}")]
    VersionMismatch { expected: String, found: String },
    #[error("checkpoint config fingerprint {found} does not match expected {expected}")]
    FingerprintMismatch { expected: String, found: String },
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Affine map from a pooled vector to one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl LinearHead {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, features: &[f32]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .map(|(&w, &x)| f64::from(w) * f64::from(x))
            .sum::<f64>()
            + f64::from(self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct ScorerModel {
    backbone: Arc<dyn Backbone>,
    pub head: LinearHead,
    pub version: String,
    pub config_fingerprint: String,
}

impl ScorerModel {
    /// A model with a zero head: every input scores 0.5.
    pub fn new(backbone: Arc<dyn Backbone>, config_fingerprint: impl Into<String>) -> Self {
        let head = LinearHead::zeros(backbone.dim());
        Self::with_head(backbone, head, config_fingerprint)
    }

    pub fn with_head(backbone: Arc<dyn Backbone>, head: LinearHead, config_fingerprint: impl Into<String>) -> Self {
        Self {
            backbone,
            head,
            version: MODEL_VERSION.to_string(),
            config_fingerprint: config_fingerprint.into(),
        }
    }

    pub fn backbone(&self) -> &Arc<dyn Backbone> {
        &self.backbone
    }

    /// Score for an already-pooled feature vector.
    pub fn score_features(&self, features: &[f32]) -> Result<f64, ScorerError> {
        if features.len() != self.head.dim() {
            return Err(ScorerError::DimensionMismatch {
                expected: self.head.dim(),
                got: features.len(),
            });
        }
        Ok(sigmoid(self.head.logit(features)))
    }

    pub fn score(&self, input: &EncodedInput) -> Result<f64, ScorerError> {
        Ok(self.score_batch(std::slice::from_ref(input), 1)?[0])
    }

    /// Scores `inputs` in chunks of `batch_size`; results do not depend on
    /// the chunking.
    pub fn score_batch(&self, inputs: &[EncodedInput], batch_size: usize) -> Result<Vec<f64>, ScorerError> {
        let texts: Vec<&str> = inputs.iter().map(|i| i.text.as_str()).collect();
        self.score_texts(&texts, batch_size)
    }

    pub fn score_texts(&self, texts: &[&str], batch_size: usize) -> Result<Vec<f64>, ScorerError> {
        if batch_size == 0 {
            return Err(ScorerError::ZeroBatch);
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ScorerError::EmptyInput);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(batch_size) {
            let feats = self.backbone.encode_batch(chunk)?;
            if feats.len() != chunk.len() {
                return Err(ScorerError::Backbone(format!(
                    "{} returned {} vectors for {} texts",
                    self.backbone.name(),
                    feats.len(),
                    chunk.len()
                )));
            }
            for f in &feats {
                out.push(self.score_features(f)?);
            }
        }
        Ok(out)
    }
}
