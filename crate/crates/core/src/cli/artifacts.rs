use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::artifact::write_atomic;
use crate::gateway::DecodingConfig;
use crate::optimizer::SolutionPair;
use crate::promptkit::{PromptCandidate, Strategy};
use crate::schema::FrameLabel;

/// Everything needed to rerun inference with the selected prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalPrompt {
    pub candidate: PromptCandidate,
    pub instruction: String,
    pub strategy: Strategy,
    pub k: usize,
    pub component_hashes: BTreeMap<String, String>,
    pub taxonomy_hash: String,
    pub embedder_fingerprint: String,
    pub index_hash: String,
    pub eval_seed: u64,
    pub decoding: DecodingConfig,
    pub validation_exact_match: f64,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predicted: Option<FrameLabel>,
    pub error: Option<String>,
    pub exemplar_ids: Vec<String>,
    pub raw: String,
}

/// Sidecar describing how a predictions file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub endpoint: String,
    /// Row label in reports, e.g. `rag_k=6` or `final[rag_k=6]`.
    pub label: String,
    pub strategy: Strategy,
    pub k: usize,
    pub candidate_id: String,
    pub optimized: bool,
    pub taxonomy_hash: String,
    pub embedder_fingerprint: String,
    pub n: usize,
}

pub fn strategy_label(strategy: Strategy, k: usize) -> String {
    if strategy == Strategy::RagK {
        format!("rag_k={k}")
    } else {
        strategy.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub endpoint: String,
    pub strategy: String,
    pub exact_match: f64,
    pub actor_acc: f64,
    pub reason_acc: f64,
    pub cause_acc: f64,
    pub validity_rate: f64,
    pub n: usize,
}

pub const REPORT_COLUMNS: &str = "endpoint,strategy,exact_match,actor_acc,reason_acc,cause_acc,validity_rate,n";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_COLUMNS}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            csv_field(&r.endpoint),
            csv_field(&r.strategy),
            r.exact_match,
            r.actor_acc,
            r.reason_acc,
            r.cause_acc,
            r.validity_rate,
            r.n
        );
    }
    out
}

pub fn report_table(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<16} {:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}\n",
        "endpoint", "strategy", "exact", "actor", "reason", "cause", "valid", "n"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>6}",
            r.endpoint, r.strategy, r.exact_match, r.actor_acc, r.reason_acc, r.cause_acc, r.validity_rate, r.n
        );
    }
    out
}

pub fn ranking_table(ranked: &[&SolutionPair]) -> String {
    let mut out = format!(
        "{:>4} {:<8} {:>5} {:<8} {:>3} {:<8} {:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}\n",
        "rank", "id", "round", "strategy", "k", "cot", "origin", "exact", "actor", "reason", "cause", "valid", "tokens"
    );
    for (i, p) in ranked.iter().enumerate() {
        let c = &p.candidate;
        let r = &p.report;
        let cot = serde_json::to_value(c.cot_mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(
            out,
            "{:>4} {:<8} {:>5} {:<8} {:>3} {:<8} {:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>6}",
            i + 1,
            c.id,
            p.round,
            c.strategy.name(),
            c.k,
            cot,
            c.provenance.transformation,
            r.exact_match,
            r.actor_acc,
            r.reason_acc,
            r.cause_acc,
            r.validity_rate,
            p.probe_tokens
        );
    }
    out
}

pub fn ranking_csv(ranked: &[&SolutionPair]) -> String {
    let mut out = String::from(
        "rank,id,round,strategy,k,cot_mode,transformation,parent,degraded,exact_match,actor_acc,reason_acc,cause_acc,validity_rate,parse_rate,calls,probe_tokens\n",
    );
    for (i, p) in ranked.iter().enumerate() {
        let c = &p.candidate;
        let r = &p.report;
        let cot = serde_json::to_value(c.cot_mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            i + 1,
            c.id,
            p.round,
            c.strategy.name(),
            c.k,
            cot,
            c.provenance.transformation,
            c.provenance.parent.as_deref().unwrap_or(""),
            c.provenance.degraded,
            r.exact_match,
            r.actor_acc,
            r.reason_acc,
            r.cause_acc,
            r.validity_rate,
            r.parse_rate,
            r.calls_used,
            p.probe_tokens
        );
    }
    out
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    write_atomic(path, bytes.as_ref()).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
    write_file(path, text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("malformed {}: {e}", path.display())))
}
