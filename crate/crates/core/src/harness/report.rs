//! Report rows, run metadata and the plain-text table.
//!
//! Row keys follow the published report schema (`docs/report.schema.json`).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::{self, relative_delta, MetricValues, ScoredSet};
use crate::scorer::BackboneSpec;

use super::config::CheckpointSharing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(rename = "Dataset")]
    pub dataset: String,
    #[serde(rename = "Technique")]
    pub technique: String,
    #[serde(rename = "# Refs")]
    pub n_refs_descriptor: String,
    #[serde(rename = "Accuracy")]
    pub accuracy: Option<f64>,
    #[serde(rename = "AUROC")]
    pub auroc: Option<f64>,
    #[serde(rename = "Correlation")]
    pub correlation: Option<f64>,
    #[serde(rename = "Accuracy Δ%", default, skip_serializing_if = "Option::is_none")]
    pub accuracy_delta: Option<f64>,
    #[serde(rename = "AUROC Δ%", default, skip_serializing_if = "Option::is_none")]
    pub auroc_delta: Option<f64>,
    #[serde(rename = "Correlation Δ%", default, skip_serializing_if = "Option::is_none")]
    pub correlation_delta: Option<f64>,
    /// Examples scored; those the technique cannot encode are excluded.
    pub n_examples: usize,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Why a metric of an ok row is empty, e.g. AUROC on a one-class set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Checkpoint fingerprint, absent for external scorers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl MetricRow {
    pub fn ok(dataset: &str, technique: &str, refs: &str, values: MetricValues, n_examples: usize) -> Self {
        Self {
            dataset: dataset.into(),
            technique: technique.into(),
            n_refs_descriptor: refs.into(),
            accuracy: Some(values.accuracy),
            auroc: Some(values.auroc),
            correlation: Some(values.correlation),
            accuracy_delta: None,
            auroc_delta: None,
            correlation_delta: None,
            n_examples,
            status: RowStatus::Ok,
            error: None,
            note: None,
            model: None,
        }
    }

    pub fn failed(dataset: &str, technique: &str, refs: &str, error: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            technique: technique.into(),
            n_refs_descriptor: refs.into(),
            accuracy: None,
            auroc: None,
            correlation: None,
            accuracy_delta: None,
            auroc_delta: None,
            correlation_delta: None,
            n_examples: 0,
            status: RowStatus::Failed,
            error: Some(error.into()),
            note: None,
            model: None,
        }
    }

    /// All metrics of `set`; undefined ones are left empty and explained in
    /// `note`.
    pub fn scored(dataset: &str, technique: &str, refs: &str, set: &ScoredSet) -> Self {
        let mut notes = Vec::new();
        let mut keep = |name: &str, r: Result<f64, metrics::MetricError>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("{name}: {e}"));
                None
            }
        };
        let auroc = keep("AUROC", metrics::auroc(set));
        let correlation = keep("Correlation", metrics::pearson(set));
        let values = MetricValues {
            accuracy: metrics::accuracy(set, metrics::DEFAULT_THRESHOLD),
            auroc: 0.0,
            correlation: 0.0,
        };
        let mut row = Self::ok(dataset, technique, refs, values, set.len());
        row.auroc = auroc;
        row.correlation = correlation;
        row.note = (!notes.is_empty()).then(|| notes.join("; "));
        row
    }

    pub fn values(&self) -> Option<MetricValues> {
        Some(MetricValues {
            accuracy: self.accuracy?,
            auroc: self.auroc?,
            correlation: self.correlation?,
        })
    }

    /// Fills each delta whose baseline value is positive; others stay empty.
    pub fn set_deltas(&mut self, baseline: &MetricValues) {
        let d = |c: Option<f64>, b: f64| c.and_then(|c| relative_delta(c, b).ok());
        self.accuracy_delta = d(self.accuracy, baseline.accuracy);
        self.auroc_delta = d(self.auroc, baseline.auroc);
        self.correlation_delta = d(self.correlation, baseline.correlation);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub source: String,
    /// SHA-256 of the canonical JSONL of the whole file.
    pub fingerprint: String,
    pub n_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectSummary {
    pub dataset: String,
    /// `load` for malformed input lines, `encode` for examples a technique
    /// cannot encode.
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique: Option<String>,
    pub count: usize,
    /// At most [`MAX_REJECT_SAMPLES`] `id: reason` strings.
    pub samples: Vec<String>,
}

pub const MAX_REJECT_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub experiment: String,
    /// `run` or `ablation`.
    pub kind: String,
    pub config_hash: String,
    pub started_at: String,
    pub finished_at: String,
    pub train_dataset: Option<DatasetInfo>,
    pub eval_datasets: Vec<DatasetInfo>,
    pub backbone: BackboneSpec,
    pub checkpoint_sharing: CheckpointSharing,
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub rows: Vec<MetricRow>,
    pub rejects: Vec<RejectSummary>,
}

impl EvalReport {
    pub fn rows_for<'a>(&'a self, dataset: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.dataset == dataset)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Aligned table, one block per dataset.
    pub fn to_text(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {} ({})", m.experiment, m.kind);
        let _ = writeln!(out, "config:     {}", m.config_hash);
        let _ = writeln!(out, "backbone:   {}", m.backbone.name);
        if let Some(t) = &m.train_dataset {
            let _ = writeln!(out, "trained on: {} [{}]", t.name, short(&t.fingerprint));
        }
        if let Some(b) = &m.baseline {
            let _ = writeln!(out, "baseline:   {b}");
        }
        let with_deltas = self.rows.iter().any(|r| r.accuracy_delta.is_some() || r.auroc_delta.is_some());
        let mut datasets: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
        }
        for name in datasets {
            let fp = m
                .eval_datasets
                .iter()
                .find(|d| d.name == name)
                .map(|d| format!(" [{}]", short(&d.fingerprint)))
                .unwrap_or_default();
            let _ = writeln!(out, "\n{name}{fp}");
            let mut header = vec!["Technique", "# Refs", "Accuracy", "AUROC", "Correlation"];
            if with_deltas {
                header.extend(["Acc Δ%", "AUROC Δ%", "Corr Δ%"]);
            }
            header.extend(["N", "Status"]);
            let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
            for r in self.rows_for(name) {
                let mut cells = vec![
                    r.technique.clone(),
                    r.n_refs_descriptor.clone(),
                    fmt_opt(r.accuracy, 4),
                    fmt_opt(r.auroc, 4),
                    fmt_opt(r.correlation, 4),
                ];
                if with_deltas {
                    cells.extend([
                        fmt_signed(r.accuracy_delta),
                        fmt_signed(r.auroc_delta),
                        fmt_signed(r.correlation_delta),
                    ]);
                }
                cells.push(r.n_examples.to_string());
                cells.push(match (&r.status, &r.error) {
                    (RowStatus::Ok, _) => "ok".into(),
                    (RowStatus::Failed, Some(e)) => format!("FAILED: {e}"),
                    (RowStatus::Failed, None) => "FAILED".into(),
                });
                table.push(cells);
            }
            render(&mut out, &table);
        }
        if !self.rejects.is_empty() {
            let _ = writeln!(out, "\nrejects:");
            for r in &self.rejects {
                let tech = r.technique.as_deref().map(|t| format!(" {t}")).unwrap_or_default();
                let _ = writeln!(out, "  {} {}{}: {}", r.dataset, r.stage, tech, r.count);
            }
        }
        out
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn fmt_signed(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:+.2}%"))
}

/// Left-aligns the first two columns and the status, right-aligns numbers.
fn render(out: &mut String, table: &[Vec<String>]) {
    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    for row in table {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let pad = widths[c] - cell.chars().count();
            let left = c < 2 || c == cols - 1;
            if left {
                line.push_str(cell);
                if c != cols - 1 {
                    line.extend(std::iter::repeat_n(' ', pad));
                }
            } else {
                line.extend(std::iter::repeat_n(' ', pad));
                line.push_str(cell);
            }
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let mut base = MetricRow::ok(
            "wikiqa",
            "AVA-TR",
            "1",
            MetricValues {
                accuracy: 0.734,
                auroc: 0.8,
                correlation: -0.1,
            },
            10,
        );
        base.model = Some("abc".into());
        let mut cand = MetricRow::ok(
            "wikiqa",
            "SQuArE",
            "5",
            MetricValues {
                accuracy: 0.833,
                auroc: 0.9,
                correlation: 0.5,
            },
            10,
        );
        cand.set_deltas(&base.values().unwrap());
        EvalReport {
            metadata: RunMetadata {
                tool_version: "0".into(),
                experiment: "t".into(),
                kind: "run".into(),
                config_hash: "h".into(),
                started_at: "s".into(),
                finished_at: "f".into(),
                train_dataset: None,
                eval_datasets: vec![],
                backbone: BackboneSpec::default(),
                checkpoint_sharing: CheckpointSharing::Shared,
                baseline: Some("AVA-TR".into()),
            },
            rows: vec![base, cand, MetricRow::failed("wikiqa", "AVA-TQR(-)", "1", "no negatives")],
            rejects: vec![],
        }
    }

    #[test]
    fn row_keys_match_the_table_columns() {
        let v = serde_json::to_value(&report().rows[1]).unwrap();
        for key in ["Dataset", "Technique", "# Refs", "Accuracy", "AUROC", "Correlation", "Accuracy Δ%"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!((v["Accuracy Δ%"].as_f64().unwrap() - 13.4877).abs() < 1e-3);
        // negative baseline correlation leaves that delta empty
        assert!(v.get("Correlation Δ%").is_none());
    }

    #[test]
    fn undefined_metrics_are_left_empty() {
        let set = ScoredSet::from_pairs(vec![0.5, 0.5, 0.5], vec![0, 1, 1]).unwrap();
        let row = MetricRow::scored("d", "Constant", "-", &set);
        assert_eq!(row.status, RowStatus::Ok);
        assert_eq!(row.accuracy, Some(2.0 / 3.0));
        assert_eq!(row.auroc, Some(0.5));
        assert_eq!(row.correlation, None);
        assert!(row.note.as_deref().unwrap().starts_with("Correlation"));
        assert!(row.values().is_none());

        let one_class = ScoredSet::from_pairs(vec![0.2, 0.7], vec![1, 1]).unwrap();
        let row = MetricRow::scored("d", "SQuArE", "5", &one_class);
        assert_eq!((row.auroc, row.correlation), (None, None));
    }

    #[test]
    fn json_round_trip() {
        let r = report();
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn text_table_is_aligned() {
        let text = report().to_text();
        assert!(text.contains("+13.49%"), "{text}");
        assert!(text.contains("FAILED: no negatives"));
        let lines: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("Technique")).take(4).collect();
        assert_eq!(lines.len(), 4);
        let width = "AVA-TQR(-)".len() + 2;
        assert_eq!(lines[0].find("# Refs"), Some(width));
        for l in &lines[1..] {
            assert_eq!(l.chars().nth(width - 1), Some(' '), "{l}");
            assert_ne!(l.chars().nth(width), Some(' '), "{l}");
        }
    }
}
