//! Three-level frame label taxonomy: actor → reason → cause.
//!
//! A taxonomy is loaded from a nested JSON document that declares its own
//! label-space size, so "this taxonomy has N labels" is checked at load time
//! instead of being assumed. Names are compared exactly after NFC
//! normalization and whitespace trimming; there is no case or diacritic
//! folding.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::hashing::sha256_hex;

/// En-dash with surrounding spaces, as in `Shop – Thay đổi thông tin – Thời gian lấy hàng`.
pub const DEFAULT_DELIMITER: &str = " – ";

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed taxonomy at line {line}, column {column}: {message}")]
    Format {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid taxonomy field `{field}`: {message}")]
    Structure { field: String, message: String },
    #[error("duplicate leaf path: {0}")]
    DuplicatePath(String),
    #[error("taxonomy declares {declared} labels but contains {counted} leaf paths")]
    SizeMismatch { declared: usize, counted: usize },
    #[error("expected 3 label parts, found {count}")]
    Arity { count: usize },
    #[error("label is not in the taxonomy: {0}")]
    UnknownLabel(FrameLabel),
    #[error("label field `{0}` is empty")]
    EmptyField(&'static str),
}

/// Trim and NFC-normalize a label component.
pub fn normalize_name(raw: &str) -> String {
    raw.trim().nfc().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Actor,
    Reason,
    Cause,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Actor, Level::Reason, Level::Cause];

    pub fn name(self) -> &'static str {
        match self {
            Level::Actor => "actor",
            Level::Reason => "reason",
            Level::Cause => "cause",
        }
    }
}

/// A (actor, reason, cause) triple.
///
/// Construction normalizes each field but does not check taxonomy
/// membership; use [`LabelTaxonomy::validate_label`] for that.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameLabel {
    pub actor: String,
    pub reason: String,
    pub cause: String,
}

impl FrameLabel {
    pub fn new(actor: &str, reason: &str, cause: &str) -> Self {
        FrameLabel {
            actor: normalize_name(actor),
            reason: normalize_name(reason),
            cause: normalize_name(cause),
        }
    }

    pub fn get(&self, level: Level) -> &str {
        match level {
            Level::Actor => &self.actor,
            Level::Reason => &self.reason,
            Level::Cause => &self.cause,
        }
    }

    pub fn is_complete(&self) -> bool {
        !self.actor.is_empty() && !self.reason.is_empty() && !self.cause.is_empty()
    }

    fn check_complete(&self) -> Result<(), SchemaError> {
        for level in Level::ALL {
            if self.get(level).is_empty() {
                return Err(SchemaError::EmptyField(level.name()));
            }
        }
        Ok(())
    }

    /// Levels on which `self` differs from `other`.
    pub fn differing_levels(&self, other: &FrameLabel) -> Vec<Level> {
        Level::ALL
            .into_iter()
            .filter(|&l| self.get(l) != other.get(l))
            .collect()
    }
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}{}{}", self.actor, DEFAULT_DELIMITER, self.reason, DEFAULT_DELIMITER, self.cause)
    }
}

/// Serialized shapes a label can take in prompts and model outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelForm {
    /// `actor – reason – cause`
    Flat,
    /// `{"actor": "...", "reason": "...", "cause": "..."}`
    Object,
    /// `("...", "...", "...")`
    Tuple,
}

impl LabelForm {
    pub const ALL: [LabelForm; 3] = [LabelForm::Flat, LabelForm::Object, LabelForm::Tuple];
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// Renders a label. The flat form joins with `delimiter`.
pub fn render_label(label: &FrameLabel, form: LabelForm, delimiter: &str) -> Result<String, SchemaError> {
    label.check_complete()?;
    Ok(match form {
        LabelForm::Flat => format!(
            "{}{delimiter}{}{delimiter}{}",
            label.actor, label.reason, label.cause
        ),
        LabelForm::Object => format!(
            "{{\"actor\": {}, \"reason\": {}, \"cause\": {}}}",
            json_str(&label.actor),
            json_str(&label.reason),
            json_str(&label.cause)
        ),
        LabelForm::Tuple => format!(
            "({}, {}, {})",
            json_str(&label.actor),
            json_str(&label.reason),
            json_str(&label.cause)
        ),
    })
}

/// On-disk taxonomy document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyDocument {
    pub size: usize,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    pub actors: Vec<ActorNode>,
}

fn default_delimiter() -> String {
    DEFAULT_DELIMITER.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorNode {
    pub name: String,
    pub reasons: Vec<ReasonNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonNode {
    pub name: String,
    pub causes: Vec<String>,
}

/// A validated, immutable label taxonomy.
#[derive(Debug, Clone)]
pub struct LabelTaxonomy {
    doc: TaxonomyDocument,
    labels: Vec<FrameLabel>,
    members: HashSet<FrameLabel>,
}

impl LabelTaxonomy {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let doc: TaxonomyDocument = serde_json::from_str(text).map_err(|e| SchemaError::Format {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_document(doc)
    }

    /// Validates a document and normalizes every name in it.
    pub fn from_document(mut doc: TaxonomyDocument) -> Result<Self, SchemaError> {
        if doc.delimiter.trim().is_empty() {
            return Err(SchemaError::Structure {
                field: "delimiter".into(),
                message: "delimiter must contain a non-space token".into(),
            });
        }
        let token = doc.delimiter.trim().to_string();
        let check = |field: String, name: &mut String| -> Result<(), SchemaError> {
            *name = normalize_name(name);
            if name.is_empty() {
                return Err(SchemaError::Structure {
                    field,
                    message: "name is empty".into(),
                });
            }
            if name.contains(&token) {
                return Err(SchemaError::Structure {
                    field,
                    message: format!("name `{name}` contains the delimiter `{token}`"),
                });
            }
            Ok(())
        };

        let mut labels = Vec::new();
        let mut members = HashSet::new();
        for (ai, actor) in doc.actors.iter_mut().enumerate() {
            check(format!("actors[{ai}].name"), &mut actor.name)?;
            if actor.reasons.is_empty() {
                return Err(SchemaError::Structure {
                    field: format!("actors[{ai}].reasons"),
                    message: "actor has no reasons".into(),
                });
            }
            for (ri, reason) in actor.reasons.iter_mut().enumerate() {
                check(format!("actors[{ai}].reasons[{ri}].name"), &mut reason.name)?;
                if reason.causes.is_empty() {
                    return Err(SchemaError::Structure {
                        field: format!("actors[{ai}].reasons[{ri}].causes"),
                        message: "reason has no causes".into(),
                    });
                }
                for (ci, cause) in reason.causes.iter_mut().enumerate() {
                    check(format!("actors[{ai}].reasons[{ri}].causes[{ci}]"), cause)?;
                    let label = FrameLabel {
                        actor: actor.name.clone(),
                        reason: reason.name.clone(),
                        cause: cause.clone(),
                    };
                    if !members.insert(label.clone()) {
                        return Err(SchemaError::DuplicatePath(label.to_string()));
                    }
                    labels.push(label);
                }
            }
        }
        if labels.len() != doc.size {
            return Err(SchemaError::SizeMismatch {
                declared: doc.size,
                counted: labels.len(),
            });
        }
        Ok(LabelTaxonomy { doc, labels, members })
    }

    pub fn size(&self) -> usize {
        self.doc.size
    }

    pub fn delimiter(&self) -> &str {
        &self.doc.delimiter
    }

    pub fn document(&self) -> &TaxonomyDocument {
        &self.doc
    }

    /// All leaf labels, depth-first in file order.
    pub fn enumerate_labels(&self) -> &[FrameLabel] {
        &self.labels
    }

    pub fn validate_label(&self, label: &FrameLabel) -> bool {
        label.is_complete() && self.members.contains(label)
    }

    /// Splits `text` on the taxonomy delimiter into exactly three parts.
    pub fn parse_label_string(&self, text: &str) -> Result<FrameLabel, SchemaError> {
        let parts: Vec<&str> = text.split(self.doc.delimiter.as_str()).collect();
        let parts = if parts.len() == 1 && self.doc.delimiter != self.doc.delimiter.trim() {
            // tolerate a bare delimiter token without surrounding spaces
            text.split(self.doc.delimiter.trim()).collect()
        } else {
            parts
        };
        if parts.len() != 3 {
            return Err(SchemaError::Arity { count: parts.len() });
        }
        let label = FrameLabel::new(parts[0], parts[1], parts[2]);
        if self.validate_label(&label) {
            Ok(label)
        } else {
            Err(SchemaError::UnknownLabel(label))
        }
    }

    pub fn render(&self, label: &FrameLabel, form: LabelForm) -> Result<String, SchemaError> {
        render_label(label, form, &self.doc.delimiter)
    }

    pub fn actor_names(&self) -> Vec<&str> {
        self.doc.actors.iter().map(|a| a.name.as_str()).collect()
    }

    /// Distinct reason names in first-appearance order.
    pub fn reason_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.doc
            .actors
            .iter()
            .flat_map(|a| a.reasons.iter())
            .map(|r| r.name.as_str())
            .filter(|n| seen.insert(*n))
            .collect()
    }

    /// SHA-256 of the canonical (normalized) JSON form.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.doc).expect("taxonomy serializes");
        sha256_hex(&canonical)
    }
}
