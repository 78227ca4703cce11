//! Experiment configuration: one JSON document per experiment.
//!
//! Relative paths inside a config file resolve against the file's directory.
//! See `docs/config.schema.json` for the published schema.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{EncodingVariant, DEFAULT_MAX_UNITS};
use crate::reference_selection::SelectionPolicy;
use crate::scorer::BackboneSpec;
use crate::training::synthetic::SyntheticSpec;
use crate::training::Hyperparams;

use super::HarnessError;

/// Env var naming the checkpoint cache directory.
pub const CACHE_DIR_ENV: &str = "SQUARE_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Technique {
    Square,
    Qt,
    Tr,
    Tqr,
    TqrNeg,
    SquarePos,
}

impl Technique {
    pub const ALL: [Technique; 6] = [
        Technique::Square,
        Technique::Qt,
        Technique::Tr,
        Technique::Tqr,
        Technique::TqrNeg,
        Technique::SquarePos,
    ];

    pub fn variant(self) -> EncodingVariant {
        match self {
            Technique::Square => EncodingVariant::square(),
            Technique::Qt => EncodingVariant::qt(),
            Technique::Tr => EncodingVariant::tr(),
            Technique::Tqr => EncodingVariant::tqr(),
            Technique::TqrNeg => EncodingVariant::tqr_neg(),
            Technique::SquarePos => EncodingVariant::square_pos(),
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Technique::Square => "SQuArE",
            Technique::Qt => "AVA-QT",
            Technique::Tr => "AVA-TR",
            Technique::Tqr => "AVA-TQR",
            Technique::TqrNeg => "AVA-TQR(-)",
            Technique::SquarePos => "SQuArE(+)",
        }
    }

    pub fn config_name(self) -> &'static str {
        match self {
            Technique::Square => "SQUARE",
            Technique::Qt => "QT",
            Technique::Tr => "TR",
            Technique::Tqr => "TQR",
            Technique::TqrNeg => "TQR_NEG",
            Technique::SquarePos => "SQUARE_POS",
        }
    }

    /// "# Refs" column text under `policy`.
    pub fn refs_descriptor(self, policy: &SelectionPolicy) -> String {
        match self.variant().max_refs_used() {
            Some(n) => n.to_string(),
            None => policy.descriptor(),
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.config_name())
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Technique::ALL
            .into_iter()
            .find(|t| t.config_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown technique {s:?}"))
    }
}

/// Where a dataset comes from: a canonical JSONL file or the synthetic
/// generator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    Path(PathBuf),
    Synthetic { synthetic: SyntheticSpec },
}

impl DatasetSource {
    fn resolve(&mut self, base: &Path) {
        if let DatasetSource::Path(p) = self {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// An out-of-process or precomputed metric reported alongside learned rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScorerConfig {
    /// Row label in reports, e.g. "BEM".
    pub label: String,
    /// Registered adapter name.
    pub adapter: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSharing {
    /// One checkpoint per technique, reused for every eval dataset.
    #[default]
    Shared,
    /// A separately seeded checkpoint per (technique, eval dataset).
    PerDataset,
}

fn default_batch() -> usize {
    64
}

fn default_max_units() -> usize {
    DEFAULT_MAX_UNITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub train_dataset: DatasetSource,
    #[serde(default)]
    pub eval_datasets: Vec<DatasetSource>,
    pub technique: Technique,
    #[serde(default)]
    pub selection_policy: SelectionPolicy,
    #[serde(default)]
    pub train_config: Hyperparams,
    #[serde(default = "default_max_units")]
    pub max_units: usize,
    #[serde(default)]
    pub baseline_technique: Option<Technique>,
    #[serde(default)]
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub external_scorers: Vec<ExternalScorerConfig>,
    #[serde(default)]
    pub checkpoint_sharing: CheckpointSharing,
    #[serde(default = "default_batch")]
    pub score_batch_size: usize,
    pub output_dir: PathBuf,
    /// Overrides the `SQUARE_CACHE_DIR` env var; default `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A toy-backbone experiment on the synthetic set.
    pub fn toy(output_dir: impl Into<PathBuf>) -> Self {
        let synthetic = DatasetSource::Synthetic {
            synthetic: SyntheticSpec::default(),
        };
        Self {
            name: "toy".into(),
            train_dataset: synthetic.clone(),
            eval_datasets: vec![synthetic],
            technique: Technique::Square,
            selection_policy: SelectionPolicy::default(),
            train_config: Hyperparams::toy(),
            max_units: DEFAULT_MAX_UNITS,
            baseline_technique: None,
            backbone: BackboneSpec::default(),
            external_scorers: Vec::new(),
            checkpoint_sharing: CheckpointSharing::Shared,
            score_batch_size: default_batch(),
            output_dir: output_dir.into(),
            cache_dir: None,
        }
    }

    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::config(format!("{e}")))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json_str(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.train_dataset.resolve(base);
        for d in &mut self.eval_datasets {
            d.resolve(base);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if let Some(c) = &mut self.cache_dir {
            if c.is_relative() {
                *c = base.join(&*c);
            }
        }
        for ext in &mut self.external_scorers {
            if let Some(p) = ext.params.get_mut("path") {
                let pb = PathBuf::from(&*p);
                if pb.is_relative() {
                    *p = base.join(pb).display().to_string();
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::config(msg));
        self.selection_policy
            .validate()
            .map_err(|e| HarnessError::config(format!("selection_policy: {e}")))?;
        let h = &self.train_config;
        if h.epochs == 0 || h.batch_size == 0 {
            return bad("train_config: epochs and batch_size must be at least 1".into());
        }
        if !(h.learning_rate > 0.0 && h.learning_rate.is_finite()) {
            return bad(format!("train_config: learning_rate must be positive, got {}", h.learning_rate));
        }
        if self.max_units == 0 {
            return bad("max_units must be positive".into());
        }
        if self.score_batch_size == 0 {
            return bad("score_batch_size must be at least 1".into());
        }
        let mut labels = std::collections::HashSet::new();
        for ext in &self.external_scorers {
            if ext.label.trim().is_empty() {
                return bad("external scorer label is empty".into());
            }
            if !labels.insert(ext.label.as_str()) {
                return bad(format!("duplicate external scorer label {:?}", ext.label));
            }
        }
        Ok(())
    }

    /// Techniques in report order: baseline first when set.
    pub fn techniques(&self) -> Vec<Technique> {
        match self.baseline_technique {
            Some(b) if b != self.technique => vec![b, self.technique],
            _ => vec![self.technique],
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// Hash of everything that affects results; output locations excluded.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("cache_dir");
            obj.remove("name");
        }
        hash_json(&v)
    }
}

/// Hex SHA-256 of the compact JSON form of `value`. Object keys are sorted
/// because `serde_json::Value` keeps maps ordered.
pub fn hash_json(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json_str(
            r#"{"train_dataset": "data/train.jsonl", "eval_datasets": ["data/test.jsonl"],
                "technique": "SQUARE", "output_dir": "out"}"#,
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.train_dataset, DatasetSource::Path("/base/data/train.jsonl".into()));
        assert_eq!(cfg.output_dir, PathBuf::from("/base/out"));
        assert_eq!(cfg.train_config.epochs, 20);
        assert_eq!(cfg.train_config.learning_rate, 1e-6);
        assert_eq!(cfg.selection_policy.total_budget, 5);
        assert_eq!(cfg.backbone.name, "toy-hashed-bag");
    }

    #[test]
    fn synthetic_source_and_unknown_fields() {
        let cfg = ExperimentConfig::from_json_str(
            r#"{"train_dataset": {"synthetic": {"seed": 3}}, "technique": "TQR_NEG", "output_dir": "o"}"#,
            Path::new("."),
        )
        .unwrap();
        assert!(matches!(cfg.train_dataset, DatasetSource::Synthetic { .. }));
        assert_eq!(cfg.technique, Technique::TqrNeg);

        let err = ExperimentConfig::from_json_str(
            r#"{"train_dataset": "x", "technique": "SQUARE", "output_dir": "o", "bogus": 1}"#,
            Path::new("."),
        )
        .unwrap_err();
        assert_eq!(err.stage, super::super::Stage::Config);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for body in [
            r#""train_config": {"epochs": 0}"#,
            r#""selection_policy": {"mode": "random_range", "range_low": 4, "range_high": 2}"#,
            r#""train_config": {"learning_rate": -1.0}"#,
            r#""technique": "BLEU""#,
        ] {
            let text = format!(r#"{{"train_dataset": "x", "technique": "SQUARE", "output_dir": "o", {body}}}"#);
            assert!(ExperimentConfig::from_json_str(&text, Path::new(".")).is_err(), "{body}");
        }
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = ExperimentConfig::toy("/tmp/a");
        let mut b = ExperimentConfig::toy("/tmp/b");
        assert_eq!(a.config_hash(), b.config_hash());
        b.technique = Technique::Qt;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn technique_names() {
        assert_eq!("tqr_neg".parse::<Technique>().unwrap(), Technique::TqrNeg);
        assert_eq!(Technique::SquarePos.display_name(), "SQuArE(+)");
        assert_eq!(Technique::Qt.refs_descriptor(&SelectionPolicy::default()), "0");
        assert_eq!(
            Technique::Square.refs_descriptor(&SelectionPolicy::random_range(1, 5)),
            "[1,5]"
        );
    }
}
