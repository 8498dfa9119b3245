//! Fixture loading and small helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use promptforge::corpus::{self, AnnotatedMessage, DatasetSplit};
use promptforge::gateway::{ChatMessage, MockModel, MockRuleSet, Role};
use promptforge::hashing::fnv1a64;
use promptforge::promptkit::ComponentLibrary;
use promptforge::retrieval::{EmbedderConfig, VectorIndex};
use promptforge::schema::LabelTaxonomy;

pub const SPLIT_SEED: u64 = 2024;
pub const RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

pub fn taxonomy() -> LabelTaxonomy {
    LabelTaxonomy::load(fixture("taxonomy.json")).expect("fixture taxonomy loads")
}

pub fn library() -> ComponentLibrary {
    ComponentLibrary::bundled().expect("bundled library loads")
}

pub fn dataset(taxonomy: &LabelTaxonomy) -> Vec<AnnotatedMessage> {
    corpus::ingest(fixture("dataset.jsonl"), taxonomy).expect("fixture dataset loads").messages
}

/// Mock model over a fixture rule file with the whole dataset as answer key.
pub fn mock(rules: &str, taxonomy: &LabelTaxonomy, key: &[AnnotatedMessage]) -> MockModel {
    let text = std::fs::read_to_string(fixture(&format!("mocks/{rules}.jsonl"))).expect("rule file");
    let rules = MockRuleSet::from_jsonl(&text).expect("rule file parses");
    MockModel::new("mock", rules, taxonomy).with_answer_key(key.iter().map(|m| (m.text.clone(), m.label.clone())))
}

/// The fixture corpus split into train/validation/test with a train index.
pub struct Pipeline {
    pub taxonomy: LabelTaxonomy,
    pub library: ComponentLibrary,
    pub messages: Vec<AnnotatedMessage>,
    pub split: DatasetSplit,
    pub train: Vec<AnnotatedMessage>,
    pub val: Vec<AnnotatedMessage>,
    pub test: Vec<AnnotatedMessage>,
    pub embedder: EmbedderConfig,
    pub index: VectorIndex,
}

impl Pipeline {
    pub fn load() -> Self {
        let taxonomy = taxonomy();
        let messages = dataset(&taxonomy);
        let split = corpus::split(&messages, RATIOS, SPLIT_SEED).expect("fixture splits");
        let owned = |ids: &[String]| -> Vec<AnnotatedMessage> {
            DatasetSplit::select(&messages, ids).into_iter().cloned().collect()
        };
        let (train, val, test) = (owned(&split.train_ids), owned(&split.val_ids), owned(&split.test_ids));
        let embedder = EmbedderConfig::default();
        let index = VectorIndex::build(&train, &embedder).expect("index builds");
        Pipeline {
            taxonomy,
            library: library(),
            messages,
            split,
            train,
            val,
            test,
            embedder,
            index,
        }
    }

    pub fn train_refs(&self) -> Vec<&AnnotatedMessage> {
        self.train.iter().collect()
    }
}

/// Conversation hash as documented for the mock: per message the role
/// name, 0x1f, the content, 0x1e, hashed with 64-bit FNV-1a.
pub fn conversation_hash(messages: &[ChatMessage]) -> u64 {
    let mut bytes = Vec::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        bytes.extend_from_slice(role.as_bytes());
        bytes.push(0x1f);
        bytes.extend_from_slice(m.content.as_bytes());
        bytes.push(0x1e);
    }
    fnv1a64(&bytes)
}

/// Hashed bag of words written out from the documented recipe.
pub fn oracle_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for tok in text.to_lowercase().split_whitespace() {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in tok.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        v[(h % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn temp_dir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

/// A one-thread HTTP server that records request bodies and answers every
/// request with a fixed status and body.
pub struct StubServer {
    pub url: String,
    pub requests: std::sync::Arc<std::sync::Mutex<Vec<String>>>,
}

impl StubServer {
    pub fn start(status: u16, reply: impl Fn(&str) -> String + Send + 'static) -> Self {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
        let requests = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((name, value)) = line.split_once(':') {
                        if name.eq_ignore_ascii_case("content-length") {
                            length = value.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0; length];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                let body = String::from_utf8_lossy(&body).into_owned();
                let answer = reply(&body);
                log.lock().unwrap().push(body);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{answer}",
                    answer.len()
                );
            }
        });
        StubServer { url, requests }
    }

    pub fn bodies(&self) -> Vec<serde_json::Value> {
        self.requests
            .lock()
            .unwrap()
            .iter()
            .map(|b| serde_json::from_str(b).expect("request body is JSON"))
            .collect()
    }
}
