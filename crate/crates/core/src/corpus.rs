//! QA-evaluation data model and dataset ingestion.
//!
//! The canonical on-disk form is JSONL, one [`QAExample`] per line:
//!
//! ```text
//! {"example_id":"e1","question":"Q?","target_answer":"A.","label":1,
//!  "pos_refs":["P."],"neg_refs":["N."],"dataset_name":"d","split":"test"}
//! ```
//!
//! Reference polarity is implied by the field that holds it. Records that
//! violate an invariant are rejected one at a time and reported; only
//! malformed JSON aborts a load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tags a reference with the correctness of the answer it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// One reference answer sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reference {
    pub text: String,
    pub polarity: Polarity,
}

impl Reference {
    pub fn new(text: impl Into<String>, polarity: Polarity) -> Result<Self, InvariantViolation> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(InvariantViolation::EmptyReference);
        }
        Ok(Self { text, polarity })
    }

    pub fn positive(text: impl Into<String>) -> Result<Self, InvariantViolation> {
        Self::new(text, Polarity::Positive)
    }

    pub fn negative(text: impl Into<String>) -> Result<Self, InvariantViolation> {
        Self::new(text, Polarity::Negative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Why a record was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvariantViolation {
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("target answer is empty")]
    EmptyTarget,
    #[error("reference text is empty")]
    EmptyReference,
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(i64),
    #[error("unknown split {0:?}")]
    BadSplit(String),
    #[error("target answer appears verbatim among the references")]
    TargetLeak,
    #[error("reference in the {field} pool has polarity {found:?}")]
    WrongPolarity { field: &'static str, found: Polarity },
    #[error("duplicate example_id {0:?}")]
    DuplicateId(String),
    #[error("example_id is empty")]
    EmptyId,
}

/// Lowercase and collapse whitespace; used by the leakage guard.
pub fn normalize_for_match(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAExample {
    pub example_id: String,
    pub question: String,
    pub target_answer: String,
    /// 1 if the target answer is correct for the question.
    pub label: u8,
    pub pos_refs: Vec<Reference>,
    pub neg_refs: Vec<Reference>,
    pub dataset_name: String,
    pub split: Split,
}

impl QAExample {
    /// Checks every per-record invariant.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.example_id.is_empty() {
            return Err(InvariantViolation::EmptyId);
        }
        if self.question.trim().is_empty() {
            return Err(InvariantViolation::EmptyQuestion);
        }
        if self.target_answer.trim().is_empty() {
            return Err(InvariantViolation::EmptyTarget);
        }
        if self.label > 1 {
            return Err(InvariantViolation::BadLabel(i64::from(self.label)));
        }
        for (field, pool, want) in [
            ("pos_refs", &self.pos_refs, Polarity::Positive),
            ("neg_refs", &self.neg_refs, Polarity::Negative),
        ] {
            for r in pool {
                if r.text.trim().is_empty() {
                    return Err(InvariantViolation::EmptyReference);
                }
                if r.polarity != want {
                    return Err(InvariantViolation::WrongPolarity {
                        field,
                        found: r.polarity,
                    });
                }
            }
        }
        let target = normalize_for_match(&self.target_answer);
        if self
            .pos_refs
            .iter()
            .chain(&self.neg_refs)
            .any(|r| normalize_for_match(&r.text) == target)
        {
            return Err(InvariantViolation::TargetLeak);
        }
        Ok(())
    }

    fn to_record(&self) -> JsonRecord {
        JsonRecord {
            example_id: self.example_id.clone(),
            question: self.question.clone(),
            target_answer: self.target_answer.clone(),
            label: i64::from(self.label),
            pos_refs: self.pos_refs.iter().map(|r| r.text.clone()).collect(),
            neg_refs: self.neg_refs.iter().map(|r| r.text.clone()).collect(),
            dataset_name: self.dataset_name.clone(),
            split: self.split.as_str().to_string(),
        }
    }
}

/// Wire form of one JSONL line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    example_id: String,
    question: String,
    target_answer: String,
    label: i64,
    pos_refs: Vec<String>,
    neg_refs: Vec<String>,
    dataset_name: String,
    split: String,
}

impl JsonRecord {
    fn into_example(self) -> Result<QAExample, InvariantViolation> {
        let label = match self.label {
            0 => 0,
            1 => 1,
            other => return Err(InvariantViolation::BadLabel(other)),
        };
        let split = self
            .split
            .parse::<Split>()
            .map_err(|_| InvariantViolation::BadSplit(self.split.clone()))?;
        let pos_refs = self
            .pos_refs
            .into_iter()
            .map(Reference::positive)
            .collect::<Result<Vec<_>, _>>()?;
        let neg_refs = self
            .neg_refs
            .into_iter()
            .map(Reference::negative)
            .collect::<Result<Vec<_>, _>>()?;
        let ex = QAExample {
            example_id: self.example_id,
            question: self.question,
            target_answer: self.target_answer,
            label,
            pos_refs,
            neg_refs,
            dataset_name: self.dataset_name,
            split,
        };
        ex.validate()?;
        Ok(ex)
    }
}

/// Independent annotator judgments for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub example_id: String,
    pub votes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<QAExample>,
    /// Source paths, adapter name, filter flags.
    pub provenance: BTreeMap<String, String>,
}

impl Dataset {
    /// Builds a dataset, failing on the first duplicate example_id.
    pub fn new(name: impl Into<String>, examples: Vec<QAExample>) -> Result<Self, InvariantViolation> {
        let mut seen = HashSet::new();
        for ex in &examples {
            if !seen.insert(ex.example_id.as_str()) {
                return Err(InvariantViolation::DuplicateId(ex.example_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            examples,
            provenance: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Examples of one split, keeping name and provenance.
    pub fn split(&self, split: Split) -> Dataset {
        Dataset {
            name: self.name.clone(),
            examples: self
                .examples
                .iter()
                .filter(|e| e.split == split)
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Hex SHA-256 of the canonical JSONL serialization.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for ex in &self.examples {
            hasher.update(to_jsonl_line(ex).as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line (JSONL) or data row (tables, header excluded).
    pub line: usize,
    pub example_id: Option<String>,
    pub reason: String,
}

/// A dataset plus the records that did not make it in.
#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON on line {line} of {path}: {source}")]
    MalformedJson {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown table format {0:?} (expected wikiqa_tsv or trecqa)")]
    UnknownFormat(String),
    #[error("table header of {path} lacks column {column:?}")]
    MissingHeaderColumn { path: String, column: &'static str },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("annotation record {0:?} has no votes")]
    EmptyVotes(String),
    #[error("annotation record {example_id:?} has invalid vote {vote}")]
    BadVote { example_id: String, vote: u8 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes one example in the canonical JSONL schema (no trailing newline).
pub fn to_jsonl_line(ex: &QAExample) -> String {
    serde_json::to_string(&ex.to_record()).expect("record serialization is infallible")
}

/// Loads a canonical JSONL file. Blank lines are skipped.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<LoadOutcome, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut outcome = read_jsonl(BufReader::new(file), &path.display().to_string())?;
    outcome
        .dataset
        .provenance
        .insert("source".into(), path.display().to_string());
    if outcome.dataset.name.is_empty() {
        outcome.dataset.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(outcome)
}

/// Reader form of [`load_jsonl`]; `origin` only labels errors.
pub fn read_jsonl(reader: impl BufRead, origin: &str) -> Result<LoadOutcome, CorpusError> {
    let mut examples = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: origin.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedJson {
                path: origin.to_string(),
                line: lineno,
                source,
            })?;
        let example_id = value
            .get("example_id")
            .and_then(|v| v.as_str())
            .map(str::to_string);
        let parsed = serde_json::from_value::<JsonRecord>(value)
            .map_err(|e| InvariantViolation::Schema(e.to_string()))
            .and_then(JsonRecord::into_example)
            .and_then(|ex| {
                if seen.contains(&ex.example_id) {
                    Err(InvariantViolation::DuplicateId(ex.example_id.clone()))
                } else {
                    Ok(ex)
                }
            });
        match parsed {
            Ok(ex) => {
                seen.insert(ex.example_id.clone());
                examples.push(ex);
            }
            Err(reason) => {
                log::warn!("{origin}:{lineno}: rejected record: {reason}");
                rejects.push(Reject {
                    line: lineno,
                    example_id,
                    reason: reason.to_string(),
                });
            }
        }
    }
    let name = examples
        .first()
        .map(|e| e.dataset_name.clone())
        .unwrap_or_default();
    Ok(LoadOutcome {
        dataset: Dataset {
            name,
            examples,
            provenance: BTreeMap::new(),
        },
        rejects,
    })
}

pub fn write_jsonl_to(dataset: &Dataset, mut writer: impl Write) -> std::io::Result<()> {
    for ex in &dataset.examples {
        writer.write_all(to_jsonl_line(ex).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_jsonl_to(dataset, BufWriter::new(file)).map_err(io_err(path))
}

/// Column layouts understood by [`adapt_as2_table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    WikiqaTsv,
    Trecqa,
}

impl TableFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            TableFormat::WikiqaTsv => "wikiqa_tsv",
            TableFormat::Trecqa => "trecqa",
        }
    }

    fn sentence_aliases(self) -> &'static [&'static str] {
        match self {
            TableFormat::WikiqaTsv => &["sentence"],
            TableFormat::Trecqa => &["sentence", "answer"],
        }
    }
}

impl FromStr for TableFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wikiqa_tsv" => Ok(TableFormat::WikiqaTsv),
            "trecqa" => Ok(TableFormat::Trecqa),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Naming for adapted datasets. `split: None` infers the split from the
/// file name (`train`/`dev`/`test` substring), falling back to test.
#[derive(Debug, Clone, Default)]
pub struct AdaptOptions {
    pub dataset_name: Option<String>,
    pub split: Option<Split>,
}

struct Candidate {
    row: usize,
    text: String,
    label: u8,
}

struct QuestionGroup {
    question: String,
    candidates: Vec<Candidate>,
}

/// Converts an answer-sentence-selection table into leave-one-out examples.
///
/// Each candidate row becomes a target; the other candidates of the same
/// question become its references, partitioned by label. Candidates whose
/// normalized text equals the target are excluded from its pools.
pub fn adapt_as2_table(
    path: impl AsRef<Path>,
    format: TableFormat,
    opts: &AdaptOptions,
) -> Result<LoadOutcome, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    let split = opts.split.unwrap_or_else(|| infer_split(&stem));
    let name = opts
        .dataset_name
        .clone()
        .unwrap_or_else(|| format.as_str().to_string());
    let mut outcome = adapt_table_reader(file, format, &name, split, &path.display().to_string())?;
    outcome
        .dataset
        .provenance
        .insert("source".into(), path.display().to_string());
    Ok(outcome)
}

fn infer_split(stem: &str) -> Split {
    if stem.contains("train") {
        Split::Train
    } else if stem.contains("dev") || stem.contains("valid") {
        Split::Dev
    } else {
        Split::Test
    }
}

/// Reader form of [`adapt_as2_table`].
pub fn adapt_table_reader(
    reader: impl std::io::Read,
    format: TableFormat,
    dataset_name: &str,
    split: Split,
    origin: &str,
) -> Result<LoadOutcome, CorpusError> {
    let csv_err = |source| CorpusError::Csv {
        path: origin.to_string(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(false)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            let mut dataset = Dataset::new(dataset_name, Vec::new()).expect("empty dataset");
            dataset.provenance = adapter_provenance(format);
            return Ok(LoadOutcome {
                dataset,
                rejects: Vec::new(),
            });
        }
        Some(h) => h.map_err(csv_err)?,
    };
    let find = |names: &[&str], column: &'static str| {
        header
            .iter()
            .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
            .ok_or_else(|| CorpusError::MissingHeaderColumn {
                path: origin.to_string(),
                column,
            })
    };
    let q_col = find(&["question"], "question")?;
    let s_col = find(format.sentence_aliases(), "sentence")?;
    let l_col = find(&["label"], "label")?;
    let id_col = header
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("questionid") || h.trim().eq_ignore_ascii_case("qid"));

    let mut rejects = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, QuestionGroup> = HashMap::new();
    for (idx, rec) in records.enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(csv_err)?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            // blank line; not a data row
            continue;
        }
        let field = |col: usize| rec.get(col).map(str::trim).filter(|s| !s.is_empty());
        let (Some(question), Some(sentence), Some(label)) = (field(q_col), field(s_col), field(l_col))
        else {
            rejects.push(Reject {
                line: row,
                example_id: None,
                reason: "row is missing a required column".into(),
            });
            continue;
        };
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => {
                rejects.push(Reject {
                    line: row,
                    example_id: None,
                    reason: format!("label must be 0 or 1, got {other:?}"),
                });
                continue;
            }
        };
        let key = id_col
            .and_then(field)
            .map(str::to_string)
            .unwrap_or_else(|| question.to_string());
        let group = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            QuestionGroup {
                question: question.to_string(),
                candidates: Vec::new(),
            }
        });
        group.candidates.push(Candidate {
            row,
            text: sentence.to_string(),
            label,
        });
    }

    let mut examples = Vec::new();
    for (q_idx, key) in order.iter().enumerate() {
        let group = &groups[key];
        for (c_idx, target) in group.candidates.iter().enumerate() {
            let target_norm = normalize_for_match(&target.text);
            let mut pos_refs = Vec::new();
            let mut neg_refs = Vec::new();
            for (o_idx, other) in group.candidates.iter().enumerate() {
                if o_idx == c_idx || normalize_for_match(&other.text) == target_norm {
                    continue;
                }
                let polarity = if other.label == 1 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                };
                let r = Reference {
                    text: other.text.clone(),
                    polarity,
                };
                match polarity {
                    Polarity::Positive => pos_refs.push(r),
                    Polarity::Negative => neg_refs.push(r),
                }
            }
            let ex = QAExample {
                example_id: format!("{dataset_name}-{split}-q{q_idx}-c{c_idx}"),
                question: group.question.clone(),
                target_answer: target.text.clone(),
                label: target.label,
                pos_refs,
                neg_refs,
                dataset_name: dataset_name.to_string(),
                split,
            };
            match ex.validate() {
                Ok(()) => examples.push(ex),
                Err(reason) => rejects.push(Reject {
                    line: target.row,
                    example_id: Some(ex.example_id),
                    reason: reason.to_string(),
                }),
            }
        }
    }
    rejects.sort_by_key(|r| r.line);
    let mut dataset = Dataset::new(dataset_name, examples).expect("generated ids are unique");
    dataset.provenance = adapter_provenance(format);
    Ok(LoadOutcome { dataset, rejects })
}

fn adapter_provenance(format: TableFormat) -> BTreeMap<String, String> {
    BTreeMap::from([("adapter".to_string(), format.as_str().to_string())])
}

/// Keeps examples whose question has at least one correct and one incorrect
/// candidate, judged over the example's own label and both reference pools.
pub fn filter_clean_setting(d: &Dataset) -> Dataset {
    let examples = d
        .examples
        .iter()
        .filter(|ex| {
            let has_pos = ex.label == 1 || !ex.pos_refs.is_empty();
            let has_neg = ex.label == 0 || !ex.neg_refs.is_empty();
            has_pos && has_neg
        })
        .cloned()
        .collect();
    let mut provenance = d.provenance.clone();
    provenance.insert("filter".into(), "clean".into());
    Dataset {
        name: d.name.clone(),
        examples,
        provenance,
    }
}

/// Strict majority of annotator votes; ties go to 0.
pub fn majority_vote(r: &AnnotationRecord) -> Result<u8, CorpusError> {
    if r.votes.is_empty() {
        return Err(CorpusError::EmptyVotes(r.example_id.clone()));
    }
    if let Some(&vote) = r.votes.iter().find(|&&v| v > 1) {
        return Err(CorpusError::BadVote {
            example_id: r.example_id.clone(),
            vote,
        });
    }
    let ones = r.votes.iter().filter(|&&v| v == 1).count();
    Ok(u8::from(2 * ones > r.votes.len()))
}

/// Relabels examples from annotation records by majority vote. Examples
/// without a record keep their label.
pub fn apply_annotations(d: &Dataset, records: &[AnnotationRecord]) -> Result<Dataset, CorpusError> {
    let mut labels = HashMap::new();
    for r in records {
        labels.insert(r.example_id.as_str(), majority_vote(r)?);
    }
    let mut out = d.clone();
    for ex in &mut out.examples {
        if let Some(&label) = labels.get(ex.example_id.as_str()) {
            ex.label = label;
        }
    }
    out.provenance.insert("labels".into(), "majority_vote".into());
    Ok(out)
}
