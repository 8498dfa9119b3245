//! Closed-loop prompt search: seed candidates, score them on the
//! validation split, refine around the incumbent and pick a final prompt.

mod eval;
mod search;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedMessage, CorpusError};
use crate::gateway::{whitespace_tokens, GatewayError};
use crate::promptkit::{compose, manual_exemplars, ComponentLibrary, CotMode, ExemplarBlock, PromptCandidate, PromptError, Rationale, Strategy};
use crate::retrieval::RetrievalError;
use crate::schema::LabelTaxonomy;

pub use eval::{evaluate_candidate, ErrorCase, EvalContext, EvalReport, ItemRecord, Predicted, Prediction};
pub use search::{
    apply_mutation, choose_operator, debate, debate_prompt, extract_block, generate_candidates, mutate, refine_prompt,
    refine_with_errors, select_error_cases, MutationOp, OptimizerModel, DEBATE_MARKER, REFINED_MARKER,
};

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("leakage guard: id `{0}` is both indexed and under evaluation")]
    Leakage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("budget exhausted while scoring `{candidate}` after {completed} of {total} messages")]
    BudgetExhausted { candidate: String, completed: usize, total: usize },
    #[error("cannot extract a refined prompt: {0}")]
    Extraction(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rounds: usize,
    pub candidates_per_round: usize,
    pub k_options: Vec<usize>,
    pub eval_seed: u64,
    pub mutation_seed: u64,
    /// Maximum number of model calls for the whole run.
    pub budget: usize,
    /// Error cases shown to the optimizer per refinement.
    pub max_cases: usize,
    pub parallelism: usize,
    pub optimizer_endpoint: String,
    pub target_endpoint: String,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            rounds: 3,
            candidates_per_round: 3,
            k_options: vec![0, 3, 6],
            eval_seed: 42,
            mutation_seed: 42,
            budget: 20_000,
            max_cases: 3,
            parallelism: 4,
            optimizer_endpoint: "optimizer".into(),
            target_endpoint: "target".into(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::Config(m.into()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.candidates_per_round == 0 {
            return bad("candidates_per_round must be at least 1");
        }
        if self.k_options.is_empty() {
            return bad("k_options must not be empty");
        }
        if self.budget == 0 {
            return bad("budget must be positive");
        }
        Ok(())
    }
}

/// A candidate bound to its validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPair {
    pub candidate: PromptCandidate,
    pub report: EvalReport,
    pub round: usize,
    /// Rendered-prompt size on the fixed probe input.
    pub probe_tokens: u64,
}

pub const PROBE_INPUT: &str = "Đơn hàng chưa được giao, vui lòng kiểm tra giúp.";

/// Whitespace tokens of the candidate rendered over [`PROBE_INPUT`], with
/// retrieval slots filled from the library's manual exemplars.
pub fn probe_tokens(library: &ComponentLibrary, taxonomy: &LabelTaxonomy, candidate: &PromptCandidate) -> Result<u64, OptimizerError> {
    let retrieved: Vec<ExemplarBlock> = if candidate.strategy == Strategy::RagK && candidate.k > 0 {
        let manual = manual_exemplars(library, taxonomy)?;
        (0..candidate.k)
            .map(|i| {
                let m = manual[i % manual.len()].clone();
                if candidate.cot_mode == CotMode::AutoCot {
                    let r = Rationale::from_label(&m.label);
                    ExemplarBlock::with_rationale(m, r)
                } else {
                    ExemplarBlock::plain(m)
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let messages = compose(library, candidate, PROBE_INPUT, &retrieved, taxonomy)?;
    Ok(messages.iter().map(|m| whitespace_tokens(&m.content)).sum())
}

/// Ranking order: higher exact match, higher validity, fewer probe
/// tokens, earlier round, smaller id. `Less` means `a` ranks first.
pub fn rank_cmp(a: &SolutionPair, b: &SolutionPair) -> Ordering {
    b.report
        .exact_match
        .total_cmp(&a.report.exact_match)
        .then_with(|| b.report.validity_rate.total_cmp(&a.report.validity_rate))
        .then_with(|| a.probe_tokens.cmp(&b.probe_tokens))
        .then_with(|| a.round.cmp(&b.round))
        .then_with(|| a.candidate.id.cmp(&b.candidate.id))
}

pub fn select_final(pairs: &[SolutionPair]) -> Option<&SolutionPair> {
    pairs.iter().min_by(|a, b| rank_cmp(a, b))
}

/// Pairs sorted best first.
pub fn ranking(pairs: &[SolutionPair]) -> Vec<&SolutionPair> {
    let mut sorted: Vec<&SolutionPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| rank_cmp(a, b));
    sorted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub pairs: Vec<SolutionPair>,
    /// Why the loop stopped early, if it did.
    pub truncated: Option<String>,
}

impl LoopOutcome {
    /// Best exact match after each completed round.
    pub fn best_so_far(&self) -> Vec<f64> {
        let rounds = self.pairs.iter().map(|p| p.round).max().unwrap_or(0);
        (1..=rounds)
            .map(|r| {
                self.pairs
                    .iter()
                    .filter(|p| p.round <= r)
                    .map(|p| p.report.exact_match)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// Runs all rounds, keeping every pair.
///
/// Budget exhaustion ends the loop with the pairs finished so far and a
/// truncation note; other failures are returned as errors.
pub fn run_loop(
    config: &OptimizerConfig,
    ctx: &EvalContext<'_>,
    opt: &OptimizerModel<'_>,
    val_set: &[AnnotatedMessage],
) -> Result<LoopOutcome, OptimizerError> {
    config.validate()?;
    ctx.guard_leakage(val_set.iter().map(|m| m.id.as_str()))?;
    let mut pairs: Vec<SolutionPair> = Vec::new();
    for round in 1..=config.rounds {
        let incumbent = select_final(&pairs).cloned();
        let candidates = match generate_candidates(round, incumbent.as_ref(), opt, config) {
            Ok(c) => c,
            Err(OptimizerError::Gateway(e @ GatewayError::BudgetExhausted { .. })) => {
                return Ok(LoopOutcome {
                    pairs,
                    truncated: Some(format!("round {round}: {e}")),
                })
            }
            Err(e) => return Err(e),
        };
        for candidate in candidates {
            let report = match evaluate_candidate(ctx, &candidate, val_set) {
                Ok(r) => r,
                Err(e @ OptimizerError::BudgetExhausted { .. }) => {
                    return Ok(LoopOutcome {
                        pairs,
                        truncated: Some(format!("round {round}: {e}")),
                    })
                }
                Err(e) => return Err(e),
            };
            let probe_tokens = probe_tokens(ctx.library, ctx.taxonomy, &candidate)?;
            pairs.push(SolutionPair {
                candidate,
                report,
                round,
                probe_tokens,
            });
        }
    }
    Ok(LoopOutcome { pairs, truncated: None })
}
