use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::OptimizerError;
use crate::corpus::AnnotatedMessage;
use crate::gateway::{request_label, run_parallel, CallBudget, ChatModel, DecodingConfig, LabelAttempt, OutputError, Role};
use crate::hashing::derive_seed_str;
use crate::promptkit::{compose, ComponentLibrary, CotMode, ExemplarBlock, PromptCandidate, Rationale, Strategy};
use crate::retrieval::{EmbedderConfig, VectorIndex};
use crate::schema::{FrameLabel, LabelTaxonomy, Level};

/// Shared inputs for scoring and inference.
pub struct EvalContext<'a> {
    pub library: &'a ComponentLibrary,
    pub taxonomy: &'a LabelTaxonomy,
    pub index: &'a VectorIndex,
    pub embedder: &'a EmbedderConfig,
    pub target: &'a dyn ChatModel,
    pub decoding: DecodingConfig,
    /// Per-message seeds derive from this and the message id.
    pub eval_seed: u64,
    pub parallelism: usize,
    pub budget: &'a CallBudget,
    /// Keep each rendered prompt in the item records.
    pub keep_prompts: bool,
    pool: HashMap<String, AnnotatedMessage>,
}

impl<'a> EvalContext<'a> {
    /// `pool` holds the messages the index was built from.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        library: &'a ComponentLibrary,
        taxonomy: &'a LabelTaxonomy,
        index: &'a VectorIndex,
        embedder: &'a EmbedderConfig,
        pool: &[&AnnotatedMessage],
        target: &'a dyn ChatModel,
        decoding: DecodingConfig,
        budget: &'a CallBudget,
    ) -> Self {
        EvalContext {
            library,
            taxonomy,
            index,
            embedder,
            target,
            eval_seed: decoding.seed,
            decoding,
            parallelism: 1,
            budget,
            keep_prompts: false,
            pool: pool.iter().map(|m| (m.id.clone(), (*m).clone())).collect(),
        }
    }

    pub fn with_eval_seed(mut self, seed: u64) -> Self {
        self.eval_seed = seed;
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn with_prompts(mut self, keep: bool) -> Self {
        self.keep_prompts = keep;
        self
    }

    /// Rejects an index that holds any of `ids`.
    pub fn guard_leakage<'i>(&self, ids: impl IntoIterator<Item = &'i str>) -> Result<(), OptimizerError> {
        match ids.into_iter().find(|id| self.index.contains(id)) {
            Some(id) => Err(OptimizerError::Leakage(id.to_string())),
            None => Ok(()),
        }
    }

    fn exemplars_for(&self, candidate: &PromptCandidate, id: &str, text: &str) -> Result<Vec<ExemplarBlock>, OptimizerError> {
        if candidate.strategy != Strategy::RagK || candidate.k == 0 {
            return Ok(Vec::new());
        }
        let query = self.embedder.embed(text)?;
        let exclude = HashSet::from([id.to_string()]);
        self.index
            .knn(&query, candidate.k, &exclude)?
            .into_iter()
            .map(|n| {
                let m = self
                    .pool
                    .get(&n.id)
                    .cloned()
                    .ok_or_else(|| OptimizerError::Data(format!("indexed id `{}` is not in the exemplar pool", n.id)))?;
                Ok(if candidate.cot_mode == CotMode::AutoCot {
                    let r = Rationale::from_label(&m.label);
                    ExemplarBlock::with_rationale(m, r)
                } else {
                    ExemplarBlock::plain(m)
                })
            })
            .collect()
    }

    /// Retrieves, renders and asks for one message's label.
    pub fn predict(
        &self,
        candidate: &PromptCandidate,
        id: &str,
        text: &str,
        budget: &CallBudget,
    ) -> Result<Prediction, OptimizerError> {
        let retrieved = self.exemplars_for(candidate, id, text)?;
        let messages = compose(self.library, candidate, text, &retrieved, self.taxonomy)?;
        let decoding = self.decoding.with_seed(derive_seed_str(self.eval_seed, id));
        let attempt = request_label(self.target, &messages, &decoding, self.taxonomy, budget)?;
        let prompt = self.keep_prompts.then(|| {
            messages
                .iter()
                .map(|m| {
                    let role = match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    };
                    format!("[{role}]\n{}", m.content)
                })
                .collect::<Vec<_>>()
                .join("\n")
        });
        Ok(Prediction {
            exemplar_ids: retrieved.into_iter().map(|b| b.message.id).collect(),
            attempt,
            prompt,
        })
    }
}

pub struct Prediction {
    pub exemplar_ids: Vec<String>,
    pub attempt: LabelAttempt,
    pub prompt: Option<String>,
}

/// Per-message outcome kept in every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub gold: FrameLabel,
    pub predicted: Option<FrameLabel>,
    pub error: Option<OutputError>,
    pub exemplar_ids: Vec<String>,
    pub calls: usize,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl ItemRecord {
    pub fn exact(&self) -> bool {
        self.predicted.as_ref() == Some(&self.gold)
    }

    pub fn level_correct(&self, level: Level) -> bool {
        self.predicted.as_ref().is_some_and(|p| p.get(level) == self.gold.get(level))
    }

    /// Wrong levels; every level when there is no valid label.
    pub fn wrong_levels(&self) -> Vec<Level> {
        match &self.predicted {
            Some(p) => p.differing_levels(&self.gold),
            None => Level::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicted {
    Label(FrameLabel),
    Error(OutputError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCase {
    pub message: AnnotatedMessage,
    pub predicted: Predicted,
    pub wrong_levels: Vec<Level>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub candidate_id: String,
    pub n: usize,
    pub exact_match: f64,
    pub actor_acc: f64,
    pub reason_acc: f64,
    pub cause_acc: f64,
    pub validity_rate: f64,
    pub parse_rate: f64,
    pub calls_used: usize,
    pub error_cases: Vec<ErrorCase>,
    pub items: Vec<ItemRecord>,
}

impl EvalReport {
    /// Aggregates item records; `messages` supplies error-case texts.
    pub fn from_items(candidate_id: &str, items: Vec<ItemRecord>, messages: &[AnnotatedMessage]) -> Self {
        let n = items.len();
        let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
        let count = |f: &dyn Fn(&ItemRecord) -> bool| items.iter().filter(|i| f(i)).count();
        let by_id: HashMap<&str, &AnnotatedMessage> = messages.iter().map(|m| (m.id.as_str(), m)).collect();
        let error_cases = items
            .iter()
            .filter(|i| !i.exact())
            .map(|i| ErrorCase {
                message: by_id.get(i.id.as_str()).map(|m| (*m).clone()).unwrap_or_else(|| AnnotatedMessage {
                    id: i.id.clone(),
                    text: String::new(),
                    label: i.gold.clone(),
                }),
                predicted: match (&i.predicted, i.error) {
                    (Some(l), _) => Predicted::Label(l.clone()),
                    (None, e) => Predicted::Error(e.unwrap_or(OutputError::Unparseable)),
                },
                wrong_levels: i.wrong_levels(),
            })
            .collect();
        EvalReport {
            candidate_id: candidate_id.to_string(),
            n,
            exact_match: frac(count(&|i| i.exact())),
            actor_acc: frac(count(&|i| i.level_correct(Level::Actor))),
            reason_acc: frac(count(&|i| i.level_correct(Level::Reason))),
            cause_acc: frac(count(&|i| i.level_correct(Level::Cause))),
            validity_rate: frac(count(&|i| i.predicted.is_some())),
            parse_rate: frac(count(&|i| i.error != Some(OutputError::Unparseable))),
            calls_used: items.iter().map(|i| i.calls).sum(),
            error_cases,
            items,
        }
    }

    pub fn level_acc(&self) -> [f64; 3] {
        [self.actor_acc, self.reason_acc, self.cause_acc]
    }
}

fn record(m: &AnnotatedMessage, p: Prediction) -> ItemRecord {
    ItemRecord {
        id: m.id.clone(),
        gold: m.label.clone(),
        predicted: p.attempt.label.clone().ok(),
        error: p.attempt.label.err(),
        exemplar_ids: p.exemplar_ids,
        calls: p.attempt.calls,
        raw: p.attempt.raw,
        prompt: p.prompt,
    }
}

/// Scores a candidate on `val_set`.
///
/// When the budget can cover the worst case (two calls per message) the
/// messages run concurrently and unused calls are returned afterwards;
/// otherwise they run one by one so that exhaustion happens at the same
/// message every time.
pub fn evaluate_candidate(
    ctx: &EvalContext<'_>,
    candidate: &PromptCandidate,
    val_set: &[AnnotatedMessage],
) -> Result<EvalReport, OptimizerError> {
    ctx.guard_leakage(val_set.iter().map(|m| m.id.as_str()))?;
    if val_set.is_empty() {
        return Err(OptimizerError::Data("validation set is empty".into()));
    }
    candidate.validate()?;
    let worst = 2 * val_set.len();
    let items = if ctx.budget.try_reserve(worst) {
        let local = CallBudget::new(worst);
        let results = run_parallel(ctx.parallelism, val_set, |_, m| ctx.predict(candidate, &m.id, &m.text, &local));
        ctx.budget.release(worst - local.used());
        results
            .into_iter()
            .zip(val_set)
            .map(|(r, m)| r.map(|p| record(m, p)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let mut items = Vec::with_capacity(val_set.len());
        for m in val_set {
            match ctx.predict(candidate, &m.id, &m.text, ctx.budget) {
                Ok(p) => items.push(record(m, p)),
                Err(OptimizerError::Gateway(crate::gateway::GatewayError::BudgetExhausted { .. })) => {
                    return Err(OptimizerError::BudgetExhausted {
                        candidate: candidate.id.clone(),
                        completed: items.len(),
                        total: val_set.len(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        items
    };
    Ok(EvalReport::from_items(&candidate.id, items, val_set))
}
