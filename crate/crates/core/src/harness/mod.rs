//! Config-driven experiment runner: in-domain and zero-shot evaluation,
//! the five-row ablation matrix, and external-scorer rows.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! report.json  report.txt
//! models/<row>/model.ckpt  models/<row>/train_log.jsonl
//! scores/<dataset>/<row>.jsonl
//! plots/<dataset>/<row>.svg  plots/<dataset>/metrics.svg
//! failed/error.json  failed/partial_report.json     (only after a failure)
//! ```
//!
//! Checkpoints are cached under `<cache_dir>/<fingerprint>/`, where the
//! fingerprint hashes the training data and every training-relevant setting.

pub mod config;
pub mod external;
pub mod plots;
pub mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::corpus::{load_jsonl, Dataset, Polarity, Split};
use crate::encoding::effective_policy;
use crate::metrics::ScoredSet;
use crate::reference_selection::SelectionPolicy;
use crate::rng::fnv1a64;
use crate::scorer::{load_checkpoint_with, save_checkpoint, Backbone, BackboneRegistry, ScorerModel, MODEL_VERSION};
use crate::training::synthetic;
use crate::training::{prepare, train, PreparedSet, TrainConfig, TrainLog};

pub use config::{
    hash_json, CheckpointSharing, DatasetSource, ExperimentConfig, ExternalScorerConfig, Technique, CACHE_DIR_ENV,
};
pub use external::{score_with_external, AdapterError, AdapterRegistry, ExternalScorer};
pub use report::{DatasetInfo, EvalReport, MetricRow, RejectSummary, RowStatus, RunMetadata, MAX_REJECT_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Data,
    Train,
    Score,
    Metrics,
    External,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Metrics => "metrics",
            Stage::External => "external",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, Clone, Error, Serialize)]
#[error("{stage} stage failed: {cause}")]
pub struct HarnessError {
    pub stage: Stage,
    pub cause: String,
}

impl HarnessError {
    pub fn new(stage: Stage, cause: impl fmt::Display) -> Self {
        Self {
            stage,
            cause: cause.to_string(),
        }
    }

    pub fn config(cause: impl fmt::Display) -> Self {
        Self::new(Stage::Config, cause)
    }
}

/// What happened to one checkpoint during a run.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    /// Row slug, also the `models/` subdirectory.
    pub row: String,
    pub fingerprint: String,
    /// `None` when the checkpoint came from the cache.
    pub log: Option<TrainLog>,
    pub checkpoint: PathBuf,
}

impl TrainRecord {
    pub fn cache_hit(&self) -> bool {
        self.log.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub trained: Vec<TrainRecord>,
}

/// A dataset as loaded for a run.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub info: DatasetInfo,
    pub data: Dataset,
    pub load_rejects: Vec<String>,
}

pub fn load_source(src: &DatasetSource) -> Result<LoadedDataset, HarnessError> {
    let (data, source, load_rejects) = match src {
        DatasetSource::Path(p) => {
            let out = load_jsonl(p).map_err(|e| HarnessError::new(Stage::Data, e))?;
            let rejects = out
                .rejects
                .iter()
                .map(|r| format!("line {}: {}", r.line, r.reason))
                .collect();
            (out.dataset, p.display().to_string(), rejects)
        }
        DatasetSource::Synthetic { synthetic: spec } => (
            synthetic::generate(spec),
            format!("synthetic(seed={})", spec.seed),
            Vec::new(),
        ),
    };
    if data.is_empty() {
        return Err(HarnessError::new(Stage::Data, format!("{source} holds no valid examples")));
    }
    Ok(LoadedDataset {
        info: DatasetInfo {
            name: data.name.clone(),
            source,
            fingerprint: data.fingerprint(),
            n_examples: data.len(),
        },
        data,
        load_rejects,
    })
}

/// One technique/policy pair to train and score.
#[derive(Debug, Clone)]
pub struct RowPlan {
    pub technique: Technique,
    pub policy: SelectionPolicy,
}

impl RowPlan {
    pub fn new(technique: Technique, policy: SelectionPolicy) -> Self {
        Self { technique, policy }
    }

    pub fn descriptor(&self) -> String {
        self.technique.refs_descriptor(&self.policy)
    }

    pub fn slug(&self) -> String {
        let d: String = self
            .descriptor()
            .chars()
            .filter_map(|c| match c {
                '[' | ']' => None,
                ',' => Some('-'),
                c => Some(c),
            })
            .collect();
        format!("{}-{d}", self.technique.config_name().to_lowercase())
    }
}

/// The five ablation rows, in report order.
pub fn ablation_plans(base: &SelectionPolicy) -> Vec<RowPlan> {
    let with = |p: SelectionPolicy| SelectionPolicy {
        split_rule: base.split_rule,
        seed: base.seed,
        ..p
    };
    vec![
        RowPlan::new(Technique::TqrNeg, with(SelectionPolicy::fixed(1))),
        RowPlan::new(Technique::SquarePos, with(SelectionPolicy::fixed(5))),
        RowPlan::new(Technique::Square, with(SelectionPolicy::fixed(3))),
        RowPlan::new(Technique::Square, with(SelectionPolicy::random_range(1, 5))),
        RowPlan::new(Technique::Square, with(SelectionPolicy::fixed(5))),
    ]
}

fn pool_requirement(t: Technique) -> Option<Polarity> {
    match t {
        Technique::Tr | Technique::Tqr => Some(Polarity::Positive),
        Technique::TqrNeg => Some(Polarity::Negative),
        _ => None,
    }
}

/// Checks that `data` has the reference pools `t` cannot do without.
pub fn check_pools(t: Technique, data: &Dataset) -> Result<(), String> {
    let Some(polarity) = pool_requirement(t) else {
        return Ok(());
    };
    let has = |e: &crate::corpus::QAExample| match polarity {
        Polarity::Positive => !e.pos_refs.is_empty(),
        Polarity::Negative => !e.neg_refs.is_empty(),
    };
    if data.examples.iter().any(has) {
        Ok(())
    } else {
        let kind = match polarity {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        };
        Err(format!("{t} requires {kind} references but {} has none", data.name))
    }
}

fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "dataset".into()
    } else {
        s
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write_err(path: &Path, e: impl fmt::Display) -> HarnessError {
    HarnessError::new(Stage::Write, format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|e| write_err(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| write_err(path, e))
}

fn encode_rejects(dataset: &str, row: &str, p: &PreparedSet) -> Option<RejectSummary> {
    (!p.skipped.is_empty()).then(|| RejectSummary {
        dataset: dataset.into(),
        stage: "encode".into(),
        technique: Some(row.into()),
        count: p.skipped.len(),
        samples: p
            .skipped
            .iter()
            .take(MAX_REJECT_SAMPLES)
            .map(|s| format!("{}: {}", s.example_id, s.reason))
            .collect(),
    })
}

fn load_rejects(d: &LoadedDataset) -> Option<RejectSummary> {
    (!d.load_rejects.is_empty()).then(|| RejectSummary {
        dataset: d.info.name.clone(),
        stage: "load".into(),
        technique: None,
        count: d.load_rejects.len(),
        samples: d.load_rejects.iter().take(MAX_REJECT_SAMPLES).cloned().collect(),
    })
}

/// Runs experiments with a given set of backbones and external adapters.
#[derive(Debug, Default)]
pub struct Runner {
    pub backbones: BackboneRegistry,
    pub adapters: AdapterRegistry,
}

/// Mutable state of one run; `rows` survive into the partial report.
struct RunState {
    started_at: String,
    rows: Vec<MetricRow>,
    rejects: Vec<RejectSummary>,
    trained: Vec<TrainRecord>,
    train_info: Option<DatasetInfo>,
    eval_info: Vec<DatasetInfo>,
}

impl RunState {
    fn new() -> Self {
        Self {
            started_at: now(),
            rows: Vec::new(),
            rejects: Vec::new(),
            trained: Vec::new(),
            train_info: None,
            eval_info: Vec::new(),
        }
    }

    fn into_report(self, cfg: &ExperimentConfig, kind: &str) -> (EvalReport, Vec<TrainRecord>) {
        let report = EvalReport {
            metadata: RunMetadata {
                tool_version: env!("CARGO_PKG_VERSION").into(),
                experiment: cfg.name.clone(),
                kind: kind.into(),
                config_hash: cfg.config_hash(),
                started_at: self.started_at,
                finished_at: now(),
                train_dataset: self.train_info,
                eval_datasets: self.eval_info,
                backbone: cfg.backbone.clone(),
                checkpoint_sharing: cfg.checkpoint_sharing,
                baseline: match kind {
                    "run" => cfg.baseline_technique.map(|t| t.display_name().to_string()),
                    _ => None,
                },
            },
            rows: self.rows,
            rejects: self.rejects,
        };
        (report, self.trained)
    }
}

impl Runner {
    pub fn new(backbones: BackboneRegistry, adapters: AdapterRegistry) -> Self {
        Self { backbones, adapters }
    }

    /// Trains (or loads) the configured technique and its baseline, scores
    /// every eval dataset's test split and writes the report. The first
    /// failing stage aborts the run.
    pub fn run_experiment(&self, cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
        cfg.validate()?;
        let mut state = RunState::new();
        match self.experiment_rows(cfg, &mut state) {
            Ok(()) => self.finish(cfg, state, "run"),
            Err(e) => Err(self.record_failure(cfg, state, "run", e)),
        }
    }

    /// Runs the five ablation rows. A failing row is reported as failed and
    /// the remaining rows still run.
    pub fn run_ablation_matrix(&self, cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
        cfg.validate()?;
        let mut state = RunState::new();
        match self.ablation_rows(cfg, &mut state) {
            Ok(()) => self.finish(cfg, state, "ablation"),
            Err(e) => Err(self.record_failure(cfg, state, "ablation", e)),
        }
    }

    /// Trains or loads every technique of the config without scoring.
    pub fn train_models(&self, cfg: &ExperimentConfig) -> Result<Vec<TrainRecord>, HarnessError> {
        cfg.validate()?;
        let train = load_source(&cfg.train_dataset)?;
        let backbone = self.backbone(cfg)?;
        cfg.techniques()
            .into_iter()
            .map(|t| {
                let plan = RowPlan::new(t, cfg.selection_policy.clone());
                self.obtain_model(cfg, &plan, &train, None, &backbone).map(|(_, r)| r)
            })
            .collect()
    }

    /// Scores every example of `data` (all splits) with the config's
    /// technique, training first when no cached checkpoint exists.
    pub fn score_dataset(&self, cfg: &ExperimentConfig, data: &Dataset) -> Result<(PreparedSet, Vec<f64>), HarnessError> {
        cfg.validate()?;
        let train = load_source(&cfg.train_dataset)?;
        let backbone = self.backbone(cfg)?;
        let plan = RowPlan::new(cfg.technique, cfg.selection_policy.clone());
        let (model, _) = self.obtain_model(cfg, &plan, &train, None, &backbone)?;
        let prepared = prepare(data, cfg.technique.variant(), &plan.policy, cfg.max_units);
        let scores = model
            .score_batch(&prepared.inputs, cfg.score_batch_size)
            .map_err(|e| HarnessError::new(Stage::Score, e))?;
        Ok((prepared, scores))
    }

    fn backbone(&self, cfg: &ExperimentConfig) -> Result<Arc<dyn Backbone>, HarnessError> {
        self.backbones.build(&cfg.backbone).map_err(HarnessError::config)
    }

    fn load_all(&self, cfg: &ExperimentConfig, state: &mut RunState) -> Result<(LoadedDataset, Vec<LoadedDataset>), HarnessError> {
        let train = load_source(&cfg.train_dataset)?;
        state.rejects.extend(load_rejects(&train));
        state.train_info = Some(train.info.clone());
        let mut evals: Vec<LoadedDataset> = Vec::new();
        for src in &cfg.eval_datasets {
            let d = load_source(src)?;
            if evals.iter().any(|e| e.info.name == d.info.name) {
                return Err(HarnessError::new(
                    Stage::Data,
                    format!("two eval datasets are named {:?}", d.info.name),
                ));
            }
            if d.data.examples.iter().all(|e| e.split != Split::Test) {
                return Err(HarnessError::new(
                    Stage::Data,
                    format!("eval dataset {} has no test split", d.info.name),
                ));
            }
            state.rejects.extend(load_rejects(&d));
            state.eval_info.push(d.info.clone());
            evals.push(d);
        }
        Ok((train, evals))
    }

    fn experiment_rows(&self, cfg: &ExperimentConfig, state: &mut RunState) -> Result<(), HarnessError> {
        let (train, evals) = self.load_all(cfg, state)?;
        if evals.is_empty() {
            return Ok(());
        }
        let backbone = self.backbone(cfg)?;
        let plans: Vec<RowPlan> = cfg
            .techniques()
            .into_iter()
            .map(|t| RowPlan::new(t, cfg.selection_policy.clone()))
            .collect();
        for plan in &plans {
            check_pools(plan.technique, &train.data).map_err(|e| HarnessError::new(Stage::Data, e))?;
            for d in &evals {
                check_pools(plan.technique, &d.data).map_err(|e| HarnessError::new(Stage::Data, e))?;
            }
        }
        let mut shared: Vec<Option<ScorerModel>> = vec![None; plans.len()];
        for d in &evals {
            let test = d.data.split(Split::Test);
            let first_row = state.rows.len();
            for (plan, slot) in plans.iter().zip(&mut shared) {
                let model = match (cfg.checkpoint_sharing, slot.as_ref()) {
                    (CheckpointSharing::Shared, Some(m)) => m.clone(),
                    (sharing, _) => {
                        let for_dataset = (sharing == CheckpointSharing::PerDataset).then_some(&d.info);
                        let (m, rec) = self.obtain_model(cfg, plan, &train, for_dataset, &backbone)?;
                        state.trained.push(rec);
                        if sharing == CheckpointSharing::Shared {
                            *slot = Some(m.clone());
                        }
                        m
                    }
                };
                let (row, rejects) = self.score_row(cfg, plan, &model, &d.info.name, &test)?;
                state.rejects.extend(rejects);
                state.rows.push(row);
            }
            for ext in &cfg.external_scorers {
                let row = self.external_row(cfg, ext, &d.info.name, &test)?;
                state.rows.push(row);
            }
            if let Some(b) = cfg.baseline_technique.filter(|&b| b != cfg.technique) {
                let base = state.rows[first_row..]
                    .iter()
                    .find(|r| r.technique == b.display_name())
                    .and_then(MetricRow::values);
                if let Some(base) = base {
                    for r in state.rows[first_row + 1..].iter_mut() {
                        r.set_deltas(&base);
                    }
                }
            }
        }
        Ok(())
    }

    fn ablation_rows(&self, cfg: &ExperimentConfig, state: &mut RunState) -> Result<(), HarnessError> {
        let (train, evals) = self.load_all(cfg, state)?;
        if evals.is_empty() {
            return Ok(());
        }
        let backbone = self.backbone(cfg)?;
        let plans = ablation_plans(&cfg.selection_policy);
        let mut shared: Vec<Option<Result<ScorerModel, String>>> = vec![None; plans.len()];
        for d in &evals {
            let test = d.data.split(Split::Test);
            for (plan, slot) in plans.iter().zip(&mut shared) {
                let (dataset, technique, refs) = (&d.info.name, plan.technique.display_name(), plan.descriptor());
                let model = match (cfg.checkpoint_sharing, slot.as_ref()) {
                    (CheckpointSharing::Shared, Some(m)) => m.clone(),
                    (sharing, _) => {
                        let for_dataset = (sharing == CheckpointSharing::PerDataset).then_some(&d.info);
                        let m = check_pools(plan.technique, &train.data)
                            .and_then(|_| check_pools(plan.technique, &d.data))
                            .map_err(|e| HarnessError::new(Stage::Data, e))
                            .and_then(|_| self.obtain_model(cfg, plan, &train, for_dataset, &backbone))
                            .map(|(m, rec)| {
                                state.trained.push(rec);
                                m
                            })
                            .map_err(|e| e.to_string());
                        if sharing == CheckpointSharing::Shared {
                            *slot = Some(m.clone());
                        }
                        m
                    }
                };
                let row = match model {
                    Err(e) => MetricRow::failed(dataset, technique, &refs, e),
                    Ok(model) => match self.score_row(cfg, plan, &model, dataset, &test) {
                        Ok((row, rejects)) => {
                            state.rejects.extend(rejects);
                            row
                        }
                        Err(e) => MetricRow::failed(dataset, technique, &refs, e.to_string()),
                    },
                };
                if let Some(e) = &row.error {
                    log::warn!("ablation row {technique} ({refs}) on {dataset} failed: {e}");
                }
                state.rows.push(row);
            }
        }
        Ok(())
    }

    /// Cache key for one checkpoint.
    pub fn model_fingerprint(
        &self,
        cfg: &ExperimentConfig,
        plan: &RowPlan,
        train: &DatasetInfo,
        for_dataset: Option<&DatasetInfo>,
    ) -> String {
        let variant = plan.technique.variant();
        hash_json(&json!({
            "model_version": MODEL_VERSION,
            "train_fingerprint": train.fingerprint,
            "technique": plan.technique.config_name(),
            "selection_policy": effective_policy(variant, &plan.policy),
            "train_config": cfg.train_config,
            "max_units": cfg.max_units,
            "backbone": cfg.backbone,
            "eval_dataset": for_dataset.map(|d| &d.fingerprint),
        }))
    }

    fn obtain_model(
        &self,
        cfg: &ExperimentConfig,
        plan: &RowPlan,
        train_ds: &LoadedDataset,
        for_dataset: Option<&DatasetInfo>,
        backbone: &Arc<dyn Backbone>,
    ) -> Result<(ScorerModel, TrainRecord), HarnessError> {
        let fp = self.model_fingerprint(cfg, plan, &train_ds.info, for_dataset);
        let mut row = plan.slug();
        if let Some(d) = for_dataset {
            row = format!("{row}-{}", sanitize(&d.name));
        }
        let cache = cfg.cache_dir().join(&fp);
        let cached_ckpt = cache.join("model.ckpt");
        let cached_log = cache.join("train_log.jsonl");

        let (model, log) = match cached_ckpt
            .exists()
            .then(|| load_checkpoint_with(&cached_ckpt, &self.backbones, Some(&fp)))
        {
            Some(Ok(model)) => {
                log::info!("{row}: cached checkpoint {}", short(&fp));
                (model, None)
            }
            other => {
                if let Some(Err(e)) = other {
                    log::warn!("{row}: ignoring unreadable cached checkpoint: {e}");
                }
                let mut hp = cfg.train_config.clone();
                if let Some(d) = for_dataset {
                    hp.seed ^= fnv1a64(d.fingerprint.as_bytes());
                }
                let mut tc = TrainConfig::new(hp, plan.technique.variant(), plan.policy.clone());
                tc.max_units = cfg.max_units;
                log::info!("{row}: training ({} epochs)", tc.hyperparams.epochs);
                let (model, log) = train(
                    &train_ds.data.split(Split::Train),
                    &train_ds.data.split(Split::Dev),
                    &tc,
                    Arc::clone(backbone),
                    &fp,
                )
                .map_err(|e| HarnessError::new(Stage::Train, format!("{row}: {e}")))?;
                create_dir(&cache)?;
                save_checkpoint(&model, &cached_ckpt).map_err(|e| write_err(&cached_ckpt, e))?;
                log.write_jsonl(&cached_log).map_err(|e| write_err(&cached_log, e))?;
                (model, Some(log))
            }
        };

        let out_dir = cfg.output_dir.join("models").join(&row);
        create_dir(&out_dir)?;
        let checkpoint = out_dir.join("model.ckpt");
        fs::copy(&cached_ckpt, &checkpoint).map_err(|e| write_err(&checkpoint, e))?;
        if cached_log.exists() {
            let dst = out_dir.join("train_log.jsonl");
            fs::copy(&cached_log, &dst).map_err(|e| write_err(&dst, e))?;
        }
        Ok((
            model,
            TrainRecord {
                row,
                fingerprint: fp,
                log,
                checkpoint,
            },
        ))
    }

    fn score_row(
        &self,
        cfg: &ExperimentConfig,
        plan: &RowPlan,
        model: &ScorerModel,
        dataset: &str,
        test: &Dataset,
    ) -> Result<(MetricRow, Option<RejectSummary>), HarnessError> {
        let slug = plan.slug();
        let prepared = prepare(test, plan.technique.variant(), &plan.policy, cfg.max_units);
        let rejects = encode_rejects(dataset, &slug, &prepared);
        if prepared.is_empty() {
            return Err(HarnessError::new(
                Stage::Score,
                format!("{slug}: no example of {dataset} can be encoded"),
            ));
        }
        let scores = model
            .score_batch(&prepared.inputs, cfg.score_batch_size)
            .map_err(|e| HarnessError::new(Stage::Score, format!("{slug} on {dataset}: {e}")))?;
        let set = prepared
            .scored(scores)
            .map_err(|e| HarnessError::new(Stage::Metrics, format!("{slug} on {dataset}: {e}")))?;
        let mut row = self.metric_row(cfg, &set, dataset, plan.technique.display_name(), &plan.descriptor(), &slug)?;
        row.model = Some(model.config_fingerprint.clone());
        Ok((row, rejects))
    }

    fn external_row(
        &self,
        cfg: &ExperimentConfig,
        ext: &ExternalScorerConfig,
        dataset: &str,
        test: &Dataset,
    ) -> Result<MetricRow, HarnessError> {
        let fail = |e: AdapterError| HarnessError::new(Stage::External, format!("{} on {dataset}: {e}", ext.label));
        let adapter = self.adapters.build(&ext.adapter, &ext.params).map_err(fail)?;
        let set = score_with_external(adapter.as_ref(), test).map_err(fail)?;
        self.metric_row(cfg, &set, dataset, &ext.label, "-", &sanitize(&ext.label))
    }

    /// Metrics, score dump and histogram for one scored row.
    fn metric_row(
        &self,
        cfg: &ExperimentConfig,
        set: &ScoredSet,
        dataset: &str,
        technique: &str,
        refs: &str,
        slug: &str,
    ) -> Result<MetricRow, HarnessError> {
        let ds = sanitize(dataset);
        let mut dump = String::new();
        for ((id, s), l) in set.example_ids().iter().zip(set.scores()).zip(set.labels()) {
            dump.push_str(&json!({"example_id": id, "label": l, "score": s}).to_string());
            dump.push('\n');
        }
        write_file(&cfg.output_dir.join("scores").join(&ds).join(format!("{slug}.jsonl")), dump)?;
        let plot_dir = cfg.output_dir.join("plots").join(&ds);
        create_dir(&plot_dir)?;
        let hist = plot_dir.join(format!("{slug}.svg"));
        plots::score_histogram(set, &format!("{technique} ({refs}) on {dataset}"), &hist)
            .map_err(|e| write_err(&hist, e))?;
        let row = MetricRow::scored(dataset, technique, refs, set);
        if let Some(note) = &row.note {
            log::warn!("{technique} on {dataset}: {note}");
        }
        Ok(row)
    }

    fn write_outputs(&self, cfg: &ExperimentConfig, report: &EvalReport) -> Result<(), HarnessError> {
        let out = &cfg.output_dir;
        write_file(&out.join("report.json"), report.to_json())?;
        write_file(&out.join("report.txt"), report.to_text())?;
        let mut names: Vec<&str> = Vec::new();
        for r in &report.rows {
            if !names.contains(&r.dataset.as_str()) {
                names.push(&r.dataset);
            }
        }
        for name in names {
            let rows: Vec<&MetricRow> = report.rows_for(name).collect();
            let dir = out.join("plots").join(sanitize(name));
            create_dir(&dir)?;
            let path = dir.join("metrics.svg");
            plots::metric_bars(&rows, name, &path).map_err(|e| write_err(&path, e))?;
        }
        Ok(())
    }

    fn finish(&self, cfg: &ExperimentConfig, state: RunState, kind: &str) -> Result<ExperimentOutput, HarnessError> {
        let (report, trained) = state.into_report(cfg, kind);
        self.write_outputs(cfg, &report)?;
        let failed = cfg.output_dir.join("failed");
        if failed.exists() {
            fs::remove_dir_all(&failed).map_err(|e| write_err(&failed, e))?;
        }
        Ok(ExperimentOutput { report, trained })
    }

    /// Writes `failed/error.json` and the rows finished so far.
    fn record_failure(&self, cfg: &ExperimentConfig, state: RunState, kind: &str, err: HarnessError) -> HarnessError {
        let (report, _) = state.into_report(cfg, kind);
        let dir = cfg.output_dir.join("failed");
        let body = serde_json::to_string_pretty(&err).expect("error serializes");
        let written = write_file(&dir.join("error.json"), body + "\n")
            .and_then(|_| write_file(&dir.join("partial_report.json"), report.to_json()));
        if let Err(e) = written {
            log::error!("could not record failure: {e}");
        }
        err
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    Runner::default().run_experiment(cfg)
}

pub fn run_ablation_matrix(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    Runner::default().run_ablation_matrix(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_descriptors_and_slugs() {
        let plans = ablation_plans(&SelectionPolicy::default().with_seed(7));
        let d: Vec<String> = plans.iter().map(RowPlan::descriptor).collect();
        assert_eq!(d, ["1", "5", "3", "[1,5]", "5"]);
        let s: Vec<String> = plans.iter().map(RowPlan::slug).collect();
        assert_eq!(s, ["tqr_neg-1", "square_pos-5", "square-3", "square-1-5", "square-5"]);
        assert!(plans.iter().all(|p| p.policy.seed == 7));
    }

    #[test]
    fn pool_requirements() {
        let mut d = synthetic::generate(&synthetic::SyntheticSpec {
            n_train: 4,
            n_dev: 0,
            n_test: 0,
            ..Default::default()
        });
        assert!(check_pools(Technique::TqrNeg, &d).is_ok());
        for e in &mut d.examples {
            e.neg_refs.clear();
        }
        let err = check_pools(Technique::TqrNeg, &d).unwrap_err();
        assert!(err.contains("negative"), "{err}");
        assert!(check_pools(Technique::Square, &d).is_ok());
        assert!(check_pools(Technique::Tr, &d).is_ok());
    }

    #[test]
    fn stage_names() {
        let e = HarnessError::new(Stage::Train, "boom");
        assert_eq!(e.to_string(), "train stage failed: boom");
        assert_eq!(serde_json::to_value(&e).unwrap()["stage"], "train");
    }
}
