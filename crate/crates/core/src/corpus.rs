//! Annotated message datasets: ingestion, seeded splits, descriptive stats.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::schema::{FrameLabel, LabelTaxonomy};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
    #[error("corpus of {n} messages is too small: {detail}")]
    TooSmall { n: usize, detail: String },
    #[error("cannot compute statistics of an empty corpus")]
    Empty,
    #[error("duplicate message id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedMessage {
    pub id: String,
    pub text: String,
    pub label: FrameLabel,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub id: String,
    pub text: String,
    pub actor: String,
    pub reason: String,
    pub cause: String,
}

impl From<&AnnotatedMessage> for MessageRecord {
    fn from(m: &AnnotatedMessage) -> Self {
        MessageRecord {
            id: m.id.clone(),
            text: m.text.clone(),
            actor: m.label.actor.clone(),
            reason: m.label.reason.clone(),
            cause: m.label.cause.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub accepted: usize,
    pub rejections: Vec<Rejection>,
}

impl IngestionReport {
    /// Line-delimited `{"line": .., "error": ..}` records.
    pub fn to_jsonl(&self) -> String {
        self.rejections
            .iter()
            .map(|r| serde_json::to_string(r).expect("rejection serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub messages: Vec<AnnotatedMessage>,
    pub report: IngestionReport,
}

pub fn ingest(path: impl AsRef<Path>, taxonomy: &LabelTaxonomy) -> Result<Ingested, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ingest_str(&text, taxonomy))
}

/// Parses dataset records. Bad lines are reported, never fatal.
pub fn ingest_str(text: &str, taxonomy: &LabelTaxonomy) -> Ingested {
    let mut messages = Vec::new();
    let mut report = IngestionReport::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_record(raw, taxonomy) {
            Ok(msg) if !seen.insert(msg.id.clone()) => report.rejections.push(Rejection {
                line,
                error: format!("duplicate id `{}`", msg.id),
            }),
            Ok(msg) => messages.push(msg),
            Err(error) => report.rejections.push(Rejection { line, error }),
        }
    }
    report.accepted = messages.len();
    Ingested { messages, report }
}

fn parse_record(raw: &str, taxonomy: &LabelTaxonomy) -> Result<AnnotatedMessage, String> {
    let rec: MessageRecord = serde_json::from_str(raw).map_err(|e| format!("malformed record: {e}"))?;
    if rec.id.trim().is_empty() {
        return Err("empty id".into());
    }
    if rec.text.trim().is_empty() {
        return Err(format!("message `{}` has empty text", rec.id));
    }
    let label = FrameLabel::new(&rec.actor, &rec.reason, &rec.cause);
    if !label.is_complete() {
        return Err(format!("message `{}` has an incomplete label `{label}`", rec.id));
    }
    if !taxonomy.validate_label(&label) {
        return Err(format!("message `{}` has unknown label `{label}`", rec.id));
    }
    Ok(AnnotatedMessage {
        id: rec.id,
        text: rec.text,
        label,
    })
}

/// Serializes messages in dataset-file form.
pub fn to_jsonl(messages: &[AnnotatedMessage]) -> String {
    messages
        .iter()
        .map(|m| serde_json::to_string(&MessageRecord::from(m)).expect("record serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Messages in `ids` order. Unknown ids are skipped.
    pub fn select<'a>(messages: &'a [AnnotatedMessage], ids: &[String]) -> Vec<&'a AnnotatedMessage> {
        let by_id: std::collections::HashMap<&str, &AnnotatedMessage> =
            messages.iter().map(|m| (m.id.as_str(), m)).collect();
        ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
    }
}

const RATIO_TOLERANCE: f64 = 1e-9;

/// Split sizes for `n` items: floor for train and validation, remainder to test.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    // the epsilon keeps products like 1500 * 0.7 from flooring to 1049
    let cut = |r: f64| ((n as f64) * r + RATIO_TOLERANCE).floor() as usize;
    let train = cut(ratios[0]).min(n);
    let val = cut(ratios[1]).min(n - train);
    (train, val, n - train - val)
}

pub fn split(messages: &[AnnotatedMessage], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, CorpusError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > RATIO_TOLERANCE {
        return Err(CorpusError::Ratios(ratios));
    }
    let n = messages.len();
    if n < 3 {
        return Err(CorpusError::TooSmall {
            n,
            detail: "at least 3 messages are required".into(),
        });
    }
    let mut ids: Vec<String> = messages.iter().map(|m| m.id.clone()).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(CorpusError::DuplicateId(dup.clone()));
    }
    let (n_train, n_val, n_test) = split_sizes(n, ratios);
    for (name, size, ratio) in [("train", n_train, ratios[0]), ("validation", n_val, ratios[1]), ("test", n_test, ratios[2])] {
        if ratio > 0.0 && size == 0 {
            return Err(CorpusError::TooSmall {
                n,
                detail: format!("{name} split would be empty at ratio {ratio}"),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test_ids = ids.split_off(n_train + n_val);
    let val_ids = ids.split_off(n_train);
    debug_assert_eq!(test_ids.len(), n_test);
    Ok(DatasetSplit {
        seed,
        ratios,
        train_ids: ids,
        val_ids,
        test_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub mean_len: f64,
    pub max_len: usize,
    pub min_len: usize,
    pub over_10: usize,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn stats(messages: &[AnnotatedMessage]) -> Result<CorpusStats, CorpusError> {
    if messages.is_empty() {
        return Err(CorpusError::Empty);
    }
    let lens: Vec<usize> = messages.iter().map(|m| word_count(&m.text)).collect();
    let total: usize = lens.iter().sum();
    Ok(CorpusStats {
        count: lens.len(),
        mean_len: total as f64 / lens.len() as f64,
        max_len: *lens.iter().max().expect("non-empty"),
        min_len: *lens.iter().min().expect("non-empty"),
        over_10: lens.iter().filter(|&&l| l > 10).count(),
    })
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<32} {:>10}", "Statistic", "Value")?;
        writeln!(f, "{:<32} {:>10}", "Total number of sentences", self.count)?;
        writeln!(f, "{:<32} {:>10}", "Average sentence length", format!("{:.2} words", self.mean_len))?;
        writeln!(f, "{:<32} {:>10}", "Maximum sentence length", format!("{} words", self.max_len))?;
        writeln!(f, "{:<32} {:>10}", "Minimum sentence length", format!("{} words", self.min_len))?;
        write!(f, "{:<32} {:>10}", "Sentences longer than 10 words", self.over_10)
    }
}
