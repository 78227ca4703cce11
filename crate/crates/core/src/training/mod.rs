//! Supervised fitting of the scorer head.
//!
//! The backbone is frozen: features for the train and dev sets are computed
//! once, then the linear head is fit by minibatch Adam on binary
//! cross-entropy. After every epoch the dev set is scored and the head is
//! snapshotted; the snapshot with the best dev AUROC (earliest on ties) is
//! returned together with the full [`TrainLog`].

pub mod synthetic;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::encoding::{encode_example, EncodedInput, EncodingVariant, DEFAULT_MAX_UNITS};
use crate::metrics::{self, MetricError, ScoredSet};
use crate::reference_selection::{PolicyError, SelectionPolicy};
use crate::rng::Stream;
use crate::scorer::{sigmoid, Backbone, LinearHead, ScorerError, ScorerModel};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the loss.
pub const P_CLAMP: f64 = 1e-7;

/// Learning rate for the toy backbone. The default 1e-6 is tuned for
/// fine-tuning a large pretrained encoder and barely moves a freshly
/// initialized linear head in 20 short epochs.
pub const TOY_LEARNING_RATE: f64 = 0.05;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    Auroc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub precision: Precision,
    pub shuffle_each_epoch: bool,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-6,
            optimizer: Optimizer::Adam,
            precision: Precision::Fp32,
            shuffle_each_epoch: true,
            seed: 0,
            selection_metric: SelectionMetric::Auroc,
        }
    }
}

impl Hyperparams {
    /// Defaults with the toy learning rate.
    pub fn toy() -> Self {
        Self {
            learning_rate: TOY_LEARNING_RATE,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub hyperparams: Hyperparams,
    pub encoding_variant: EncodingVariant,
    pub selection_policy: SelectionPolicy,
    pub max_units: usize,
}

impl TrainConfig {
    pub fn new(hyperparams: Hyperparams, encoding_variant: EncodingVariant, selection_policy: SelectionPolicy) -> Self {
        Self {
            hyperparams,
            encoding_variant,
            selection_policy,
            max_units: DEFAULT_MAX_UNITS,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let h = &self.hyperparams;
        if h.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if h.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(h.learning_rate > 0.0 && h.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                h.learning_rate
            )));
        }
        if self.max_units == 0 {
            return Err(TrainError::Config("max_units must be positive".into()));
        }
        self.selection_policy.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_accuracy: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose snapshot was kept.
    pub selected_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    #[serde(flatten)]
    record: EpochRecord,
    selected: bool,
}

impl TrainLog {
    pub fn from_records(epochs: Vec<EpochRecord>) -> Option<Self> {
        let aurocs: Vec<f64> = epochs.iter().map(|e| e.val_auroc).collect();
        let selected_epoch = select_best_epoch(&aurocs)?;
        Some(Self { epochs, selected_epoch })
    }

    pub fn selected(&self) -> &EpochRecord {
        &self.epochs[self.selected_epoch - 1]
    }

    /// One epoch record per line; the kept epoch carries `"selected":true`.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.epochs {
            let line = LogLine {
                record: r.clone(),
                selected: r.epoch == self.selected_epoch,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let mut epochs = Vec::new();
        let mut selected = None;
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line)?;
            if parsed.selected {
                selected = Some(parsed.record.epoch);
            }
            epochs.push(parsed.record);
        }
        let invalid = || std::io::Error::new(std::io::ErrorKind::InvalidData, "train log has no selected epoch");
        Ok(Self {
            epochs,
            selected_epoch: selected.ok_or_else(invalid)?,
        })
    }
}

/// 1-based index of the first maximum, `None` for an empty slice.
pub fn select_best_epoch(aurocs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &a) in aurocs.iter().enumerate() {
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i + 1)
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{0} set has no usable examples")]
    EmptySet(&'static str),
    #[error("dev set contains a single class; AUROC is undefined")]
    DevSingleClass,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Binary cross-entropy with `p` clamped away from 0 and 1.
pub fn loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn logit(features: &[f32], weights: &[f64], bias: f64) -> f64 {
    features
        .iter()
        .zip(weights)
        .map(|(&x, &w)| f64::from(x) * w)
        .sum::<f64>()
        + bias
}

/// Mean loss over a minibatch for head parameters `(weights, bias)`.
pub fn batch_loss(features: &[&[f32]], labels: &[u8], weights: &[f64], bias: f64) -> f64 {
    let total: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| loss(sigmoid(logit(x, weights, bias)), y))
        .sum();
    total / features.len() as f64
}

/// Mean loss and its gradient w.r.t. weights and bias.
pub fn batch_loss_and_grad(features: &[&[f32]], labels: &[u8], weights: &[f64], bias: f64) -> (f64, Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    let mut total = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let p = sigmoid(logit(x, weights, bias));
        total += loss(p, y);
        // the clamp is flat outside its band
        let dz = if (P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
            p - f64::from(y)
        } else {
            0.0
        };
        for (g, &xi) in grad_w.iter_mut().zip(x.iter()) {
            *g += dz * f64::from(xi);
        }
        grad_b += dz;
    }
    for g in &mut grad_w {
        *g /= n;
    }
    (total / n, grad_w, grad_b / n)
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            *p = (f64::from(*p) - update) as f32;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub example_id: String,
    pub reason: String,
}

/// A dataset after reference selection and encoding.
#[derive(Debug, Clone, Default)]
pub struct PreparedSet {
    pub inputs: Vec<EncodedInput>,
    pub labels: Vec<u8>,
    pub example_ids: Vec<String>,
    /// Examples the variant cannot encode (e.g. TR without a positive).
    pub skipped: Vec<Skipped>,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }

    pub fn scored(&self, scores: Vec<f64>) -> Result<ScoredSet, MetricError> {
        ScoredSet::new(scores, self.labels.clone(), self.example_ids.clone())
    }
}

/// Selects references once per example and encodes it.
pub fn prepare(dataset: &Dataset, variant: EncodingVariant, policy: &SelectionPolicy, max_units: usize) -> PreparedSet {
    let mut out = PreparedSet::default();
    for ex in &dataset.examples {
        match encode_example(ex, variant, policy, max_units) {
            Ok(input) => {
                out.inputs.push(input);
                out.labels.push(ex.label);
                out.example_ids.push(ex.example_id.clone());
            }
            Err(e) => out.skipped.push(Skipped {
                example_id: ex.example_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    out
}

fn embed(backbone: &dyn Backbone, set: &PreparedSet, batch_size: usize) -> Result<Vec<Vec<f32>>, ScorerError> {
    let mut feats = Vec::with_capacity(set.len());
    for chunk in set.inputs.chunks(batch_size) {
        let texts: Vec<&str> = chunk.iter().map(|i| i.text.as_str()).collect();
        let out = backbone.encode_batch(&texts)?;
        if out.len() != texts.len() {
            return Err(ScorerError::Backbone(format!(
                "{} returned {} vectors for {} texts",
                backbone.name(),
                out.len(),
                texts.len()
            )));
        }
        feats.extend(out);
    }
    Ok(feats)
}

/// Dev-set accuracy and AUROC for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevPoint {
    pub accuracy: f64,
    pub auroc: f64,
}

/// Encodes both datasets with the config's variant and policy, then fits.
pub fn train(
    train_set: &Dataset,
    dev_set: &Dataset,
    cfg: &TrainConfig,
    backbone: Arc<dyn Backbone>,
    config_fingerprint: &str,
) -> Result<(ScorerModel, TrainLog), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("train"));
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptySet("dev"));
    }
    let train_p = prepare(train_set, cfg.encoding_variant, &cfg.selection_policy, cfg.max_units);
    let dev_p = prepare(dev_set, cfg.encoding_variant, &cfg.selection_policy, cfg.max_units);
    train_prepared(&train_p, &dev_p, &cfg.hyperparams, backbone, config_fingerprint)
}

/// Fits on already-encoded sets; dev evaluation uses the real dev scores.
pub fn train_prepared(
    train_p: &PreparedSet,
    dev_p: &PreparedSet,
    hp: &Hyperparams,
    backbone: Arc<dyn Backbone>,
    config_fingerprint: &str,
) -> Result<(ScorerModel, TrainLog), TrainError> {
    if dev_p.is_empty() {
        return Err(TrainError::EmptySet("dev"));
    }
    if !dev_p.has_both_classes() {
        return Err(TrainError::DevSingleClass);
    }
    let dev_feats = embed(backbone.as_ref(), dev_p, hp.batch_size)?;
    fit(train_p, hp, backbone, config_fingerprint, |model, _epoch| {
        let scores = dev_feats
            .iter()
            .map(|f| model.score_features(f))
            .collect::<Result<Vec<_>, _>>()?;
        let set = dev_p.scored(scores)?;
        Ok(DevPoint {
            accuracy: metrics::accuracy(&set, metrics::DEFAULT_THRESHOLD),
            auroc: metrics::auroc(&set)?,
        })
    })
}

/// The training loop with a pluggable per-epoch dev evaluation.
pub fn fit<F>(
    train_p: &PreparedSet,
    hp: &Hyperparams,
    backbone: Arc<dyn Backbone>,
    config_fingerprint: &str,
    mut evaluate: F,
) -> Result<(ScorerModel, TrainLog), TrainError>
where
    F: FnMut(&ScorerModel, usize) -> Result<DevPoint, TrainError>,
{
    if hp.epochs == 0 || hp.batch_size == 0 {
        return Err(TrainError::Config("epochs and batch_size must be at least 1".into()));
    }
    if train_p.is_empty() {
        return Err(TrainError::EmptySet("train"));
    }
    let train_feats = embed(backbone.as_ref(), train_p, hp.batch_size)?;
    let dim = backbone.dim();
    let mut model = ScorerModel::new(backbone, config_fingerprint);
    if let Some(f) = train_feats.iter().find(|f| f.len() != dim) {
        return Err(ScorerError::DimensionMismatch {
            expected: dim,
            got: f.len(),
        }
        .into());
    }

    // weights followed by the bias
    let mut params: Vec<f32> = vec![0.0; dim + 1];
    let mut adam = Adam::new(dim + 1, hp.learning_rate);
    let mut rng = Stream::new(hp.seed, "train-shuffle");
    let mut order: Vec<usize> = (0..train_p.len()).collect();

    let mut records = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, LinearHead)> = None;
    for epoch in 1..=hp.epochs {
        if hp.shuffle_each_epoch {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(hp.batch_size).enumerate() {
            let feats: Vec<&[f32]> = batch.iter().map(|&i| train_feats[i].as_slice()).collect();
            let labels: Vec<u8> = batch.iter().map(|&i| train_p.labels[i]).collect();
            let weights: Vec<f64> = params[..dim].iter().map(|&w| f64::from(w)).collect();
            let (batch_loss, grad_w, grad_b) = batch_loss_and_grad(&feats, &labels, &weights, f64::from(params[dim]));
            if !batch_loss.is_finite() || grad_w.iter().any(|g| !g.is_finite()) || !grad_b.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step: step + 1 });
            }
            let mut grads = grad_w;
            grads.push(grad_b);
            adam.step(&mut params, &grads);
            loss_sum += batch_loss * batch.len() as f64;
        }
        model.head = LinearHead {
            weights: params[..dim].to_vec(),
            bias: params[dim],
        };
        let point = evaluate(&model, epoch)?;
        let mean_train_loss = loss_sum / train_p.len() as f64;
        log::debug!(
            "epoch {epoch}: loss {mean_train_loss:.5} dev acc {:.4} auroc {:.4}",
            point.accuracy,
            point.auroc
        );
        if best.as_ref().is_none_or(|(b, _)| point.auroc > *b) {
            best = Some((point.auroc, model.head.clone()));
        }
        records.push(EpochRecord {
            epoch,
            mean_train_loss,
            val_accuracy: point.accuracy,
            val_auroc: point.auroc,
        });
    }
    let log = TrainLog::from_records(records).expect("at least one epoch");
    model.head = best.expect("at least one epoch").1;
    Ok((model, log))
}
