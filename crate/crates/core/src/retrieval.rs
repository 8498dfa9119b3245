//! Text embedding and an exact cosine top-k exemplar index.
//!
//! The builtin embedder is a hashed bag of words: lowercase, split on
//! whitespace, FNV-1a each token into one of `dim` buckets, count, and
//! L2-normalize. Empty text maps to the zero vector. A remote embedder can
//! be configured instead; its vectors are re-normalized locally.
//!
//! Search is exhaustive. Results are ordered by descending score with ties
//! broken by ascending id, so every query has a single correct answer.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::AnnotatedMessage;
use crate::hashing::fnv1a64;
use crate::http::{self, HttpError, RetryPolicy};

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedder configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("remote embedder failed: {0}")]
    Remote(#[from] HttpError),
    #[error("duplicate exemplar id `{0}`")]
    DuplicateId(String),
    #[error("cannot embed message `{id}`: {reason}")]
    Embedding { id: String, reason: String },
    #[error("cannot build an index from zero messages")]
    EmptyIndex,
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenHash {
    Fnv1a64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderConfig {
    Builtin {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_hash")]
        hash: TokenHash,
    },
    Remote {
        url: String,
        dim: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        max_retries: u32,
    },
}

fn default_dim() -> usize {
    DEFAULT_DIM
}
fn default_hash() -> TokenHash {
    TokenHash::Fnv1a64
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Builtin {
            dim: DEFAULT_DIM,
            hash: TokenHash::Fnv1a64,
        }
    }
}

impl EmbedderConfig {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderConfig::Builtin { dim, .. } | EmbedderConfig::Remote { dim, .. } => *dim,
        }
    }

    /// Identifies the embedding function; stored in every index.
    pub fn fingerprint(&self) -> String {
        match self {
            EmbedderConfig::Builtin { dim, hash } => {
                let h = match hash {
                    TokenHash::Fnv1a64 => "fnv1a64",
                };
                format!("builtin-bow/{h}/lower-ws/l2/d={dim}")
            }
            EmbedderConfig::Remote { url, dim, .. } => format!("remote/{url}/d={dim}"),
        }
    }

    fn validate(&self) -> Result<(), RetrievalError> {
        if self.dim() == 0 {
            return Err(RetrievalError::Config("dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        Ok(self.embed_batch(&[text])?.pop().expect("one vector per text"))
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        self.validate()?;
        match self {
            EmbedderConfig::Builtin { dim, hash } => Ok(texts.iter().map(|t| embed_bow(t, *dim, *hash)).collect()),
            EmbedderConfig::Remote {
                url,
                dim,
                timeout_secs,
                max_retries,
            } => {
                let policy = RetryPolicy {
                    timeout: Duration::from_secs(*timeout_secs),
                    max_retries: *max_retries,
                    ..RetryPolicy::default()
                };
                let raw = http::post_json(url, None, &EmbedRequest { texts }, policy)?;
                let resp: EmbedResponse =
                    serde_json::from_str(&raw).map_err(|e| HttpError::Decode(e.to_string()))?;
                if resp.vectors.len() != texts.len() {
                    return Err(RetrievalError::Config(format!(
                        "remote embedder returned {} vectors for {} texts",
                        resp.vectors.len(),
                        texts.len()
                    )));
                }
                resp.vectors
                    .into_iter()
                    .map(|v| {
                        if v.len() != *dim {
                            return Err(RetrievalError::Dimension {
                                expected: *dim,
                                actual: v.len(),
                            });
                        }
                        Ok(EmbeddingVector::normalized(v))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

fn embed_bow(text: &str, dim: usize, hash: TokenHash) -> EmbeddingVector {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    let mut values = vec![0.0; dim];
    for token in normalized.split_whitespace() {
        let h = match hash {
            TokenHash::Fnv1a64 => fnv1a64(token.as_bytes()),
        };
        values[(h % dim as u64) as usize] += 1.0;
    }
    EmbeddingVector::normalized(values)
}

/// A unit-length vector, or exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalizes `values`; an all-zero input stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Cosine similarity, clamped to [-1, 1]. Zero vectors score 0.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

/// Immutable exemplar index. Entries keep insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    fingerprint: String,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    positions: HashMap<String, usize>,
}

const MAGIC: &[u8; 4] = b"PFVI";
const FORMAT_VERSION: u16 = 1;

impl VectorIndex {
    pub fn build(messages: &[AnnotatedMessage], embedder: &EmbedderConfig) -> Result<Self, RetrievalError> {
        let refs: Vec<&AnnotatedMessage> = messages.iter().collect();
        Self::build_from(&refs, embedder)
    }

    pub fn build_from(messages: &[&AnnotatedMessage], embedder: &EmbedderConfig) -> Result<Self, RetrievalError> {
        if messages.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let mut positions = HashMap::with_capacity(messages.len());
        for (i, m) in messages.iter().enumerate() {
            if positions.insert(m.id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateId(m.id.clone()));
            }
        }
        let texts: Vec<&str> = messages.iter().map(|m| m.text.as_str()).collect();
        let vectors = match embedder {
            EmbedderConfig::Builtin { .. } => embedder.embed_batch(&texts)?,
            EmbedderConfig::Remote { .. } => {
                // one call per message so a failure can be attributed
                let mut out = Vec::with_capacity(texts.len());
                for m in messages {
                    out.push(embedder.embed(&m.text).map_err(|e| RetrievalError::Embedding {
                        id: m.id.clone(),
                        reason: e.to_string(),
                    })?);
                }
                out
            }
        };
        Ok(VectorIndex {
            dim: embedder.dim(),
            fingerprint: embedder.fingerprint(),
            ids: messages.iter().map(|m| m.id.clone()).collect(),
            vectors,
            positions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        self.positions.get(id).map(|&i| &self.vectors[i])
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    /// Exact top-`k` neighbors of `query`, skipping ids in `exclude`.
    pub fn knn(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<Neighbor>, RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::Dimension {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap: BinaryHeap<Reverse<Ranked<'_>>> = BinaryHeap::with_capacity(k + 1);
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            if exclude.contains(id) {
                continue;
            }
            let cand = Ranked {
                score: query.cosine(v),
                id,
            };
            if heap.len() < k {
                heap.push(Reverse(cand));
            } else if let Some(Reverse(worst)) = heap.peek() {
                if cand > *worst {
                    heap.pop();
                    heap.push(Reverse(cand));
                }
            }
        }
        let mut best: Vec<Ranked<'_>> = heap.into_iter().map(|Reverse(r)| r).collect();
        best.sort_by(|a, b| b.cmp(a));
        Ok(best
            .into_iter()
            .map(|r| Neighbor {
                id: r.id.clone(),
                score: r.score,
            })
            .collect())
    }

    /// Binary form: magic, version, dim, fingerprint, count, then
    /// (id, little-endian f64 values) per entry.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.ids.len() * (self.dim * 8 + 16));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        write_str(&mut out, &self.fingerprint);
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            write_str(&mut out, id);
            for x in v.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(RetrievalError::Corrupt("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(RetrievalError::Corrupt(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(r.array()?) as usize;
        let fingerprint = r.string()?;
        if fingerprint.is_empty() {
            return Err(RetrievalError::Corrupt("empty fingerprint".into()));
        }
        let count = u64::from_le_bytes(r.array()?) as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        let mut vectors = Vec::with_capacity(count.min(1 << 20));
        let mut positions = HashMap::new();
        for i in 0..count {
            let id = r.string()?;
            if positions.insert(id.clone(), i).is_some() {
                return Err(RetrievalError::Corrupt(format!("duplicate id `{id}`")));
            }
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(f64::from_le_bytes(r.array()?));
            }
            ids.push(id);
            vectors.push(EmbeddingVector(values));
        }
        if r.pos != bytes.len() {
            return Err(RetrievalError::Corrupt("trailing bytes".into()));
        }
        Ok(VectorIndex {
            dim,
            fingerprint,
            ids,
            vectors,
            positions,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let path = path.as_ref();
        crate::artifact::write_atomic(path, &self.to_bytes()).map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy)]
struct Ranked<'a> {
    score: f64,
    id: &'a String,
}

// Greater means better: higher score, then smaller id.
impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RetrievalError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RetrievalError::Corrupt("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], RetrievalError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn string(&mut self) -> Result<String, RetrievalError> {
        let len = u32::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| RetrievalError::Corrupt(e.to_string()))
    }
}
