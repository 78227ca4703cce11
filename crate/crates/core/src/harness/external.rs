//! Adapters for metrics computed outside this crate.
//!
//! An adapter sees the canonical dataset and returns `(example_id, score)`
//! pairs; [`score_with_external`] aligns them with the dataset's labels.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::corpus::{to_jsonl_line, Dataset};
use crate::metrics::{MetricError, ScoredSet};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("unknown adapter {0:?}")]
    Unknown(String),
    #[error("adapter {adapter}: bad parameter {param}: {reason}")]
    Param {
        adapter: String,
        param: String,
        reason: String,
    },
    #[error("adapter returned no score for {} example(s): {}", .0.len(), .0.join(", "))]
    MissingScores(Vec<String>),
    #[error("adapter returned two scores for {0}")]
    DuplicateScore(String),
    #[error("adapter failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub trait ExternalScorer: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn score(&self, dataset: &Dataset) -> Result<Vec<(String, f64)>, AdapterError>;
}

type Factory = dyn Fn(&BTreeMap<String, String>) -> Result<Arc<dyn ExternalScorer>, AdapterError> + Send + Sync;

pub struct AdapterRegistry {
    factories: BTreeMap<String, Box<Factory>>,
}

impl fmt::Debug for AdapterRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdapterRegistry")
            .field("names", &self.factories.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl AdapterRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&BTreeMap<String, String>) -> Result<Arc<dyn ExternalScorer>, AdapterError> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn build(&self, name: &str, params: &BTreeMap<String, String>) -> Result<Arc<dyn ExternalScorer>, AdapterError> {
        let factory = self.factories.get(name).ok_or_else(|| AdapterError::Unknown(name.to_string()))?;
        factory(params)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

impl Default for AdapterRegistry {
    /// `constant`, `label-oracle`, `scores-file` and `command`.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("constant", |p| {
            let value = match p.get("value") {
                Some(v) => v.parse::<f64>().map_err(|e| param_err("constant", "value", e))?,
                None => 0.5,
            };
            Ok(Arc::new(ConstantScorer { value }) as Arc<dyn ExternalScorer>)
        });
        r.register("label-oracle", |_| Ok(Arc::new(LabelOracle) as Arc<dyn ExternalScorer>));
        r.register("scores-file", |p| {
            let path = p.get("path").ok_or_else(|| param_err("scores-file", "path", "required"))?;
            Ok(Arc::new(ScoresFile { path: path.into() }) as Arc<dyn ExternalScorer>)
        });
        r.register("command", |p| {
            let program = p.get("program").ok_or_else(|| param_err("command", "program", "required"))?;
            let args = match p.get("args") {
                Some(a) => serde_json::from_str::<Vec<String>>(a).map_err(|e| param_err("command", "args", e))?,
                None => Vec::new(),
            };
            Ok(Arc::new(CommandScorer {
                program: program.clone(),
                args,
            }) as Arc<dyn ExternalScorer>)
        });
        r
    }
}

fn param_err(adapter: &str, param: &str, reason: impl fmt::Display) -> AdapterError {
    AdapterError::Param {
        adapter: adapter.into(),
        param: param.into(),
        reason: reason.to_string(),
    }
}

/// Runs `adapter` and aligns its scores with the dataset's order and labels.
pub fn score_with_external(adapter: &dyn ExternalScorer, dataset: &Dataset) -> Result<ScoredSet, AdapterError> {
    let mut by_id: HashMap<String, f64> = HashMap::new();
    for (id, score) in adapter.score(dataset)? {
        if by_id.insert(id.clone(), score).is_some() {
            return Err(AdapterError::DuplicateScore(id));
        }
    }
    let missing: Vec<String> = dataset
        .examples
        .iter()
        .filter(|e| !by_id.contains_key(&e.example_id))
        .map(|e| e.example_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(AdapterError::MissingScores(missing));
    }
    let scores = dataset.examples.iter().map(|e| by_id[&e.example_id]).collect();
    let labels = dataset.examples.iter().map(|e| e.label).collect();
    let ids = dataset.examples.iter().map(|e| e.example_id.clone()).collect();
    Ok(ScoredSet::new(scores, labels, ids)?)
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer {
    pub value: f64,
}

impl ExternalScorer for ConstantScorer {
    fn name(&self) -> &str {
        "constant"
    }

    fn score(&self, dataset: &Dataset) -> Result<Vec<(String, f64)>, AdapterError> {
        Ok(dataset.examples.iter().map(|e| (e.example_id.clone(), self.value)).collect())
    }
}

/// Scores each example with its own label. Useful only as a pipeline check.
#[derive(Debug, Clone, Copy)]
pub struct LabelOracle;

impl ExternalScorer for LabelOracle {
    fn name(&self) -> &str {
        "label-oracle"
    }

    fn score(&self, dataset: &Dataset) -> Result<Vec<(String, f64)>, AdapterError> {
        Ok(dataset
            .examples
            .iter()
            .map(|e| (e.example_id.clone(), f64::from(e.label)))
            .collect())
    }
}

#[derive(Debug, Deserialize)]
struct ScoreLine {
    example_id: String,
    score: f64,
}

/// Precomputed scores, one `{"example_id": .., "score": ..}` object per line.
#[derive(Debug, Clone)]
pub struct ScoresFile {
    pub path: PathBuf,
}

impl ExternalScorer for ScoresFile {
    fn name(&self) -> &str {
        "scores-file"
    }

    fn score(&self, _dataset: &Dataset) -> Result<Vec<(String, f64)>, AdapterError> {
        let file = std::fs::File::open(&self.path)
            .map_err(|e| AdapterError::Failed(format!("{}: {e}", self.path.display())))?;
        parse_score_lines(BufReader::new(file))
    }
}

fn parse_score_lines(reader: impl BufRead) -> Result<Vec<(String, f64)>, AdapterError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AdapterError::Failed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreLine =
            serde_json::from_str(&line).map_err(|e| AdapterError::Failed(format!("line {}: {e}", i + 1)))?;
        out.push((rec.example_id, rec.score));
    }
    Ok(out)
}

/// Pipes the canonical JSONL to a child process and reads score lines back.
#[derive(Debug, Clone)]
pub struct CommandScorer {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalScorer for CommandScorer {
    fn name(&self) -> &str {
        "command"
    }

    fn score(&self, dataset: &Dataset) -> Result<Vec<(String, f64)>, AdapterError> {
        let fail = |e: std::io::Error| AdapterError::Failed(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(fail)?;
        let mut input = String::new();
        for ex in &dataset.examples {
            input.push_str(&to_jsonl_line(ex));
            input.push('\n');
        }
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let output = child.wait_with_output().map_err(fail)?;
        writer
            .join()
            .map_err(|_| AdapterError::Failed("stdin writer panicked".into()))?
            .map_err(fail)?;
        if !output.status.success() {
            return Err(AdapterError::Failed(format!("{} exited with {}", self.program, output.status)));
        }
        parse_score_lines(output.stdout.as_slice())
    }
}
