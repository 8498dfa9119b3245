//! Auto-CoT: sample reasoning chains for exemplars and keep one whose final
//! answer agrees with the gold label.

use crate::corpus::AnnotatedMessage;
use crate::gateway::{parse_frame_response, run_parallel, CallBudget, ChatMessage, ChatModel, DecodingConfig, GatewayError, ParseFailure};
use crate::hashing::derive_seed;
use crate::schema::LabelTaxonomy;

use super::{ids, label_space_summary, render_template, ComponentLibrary, ExemplarBlock, PromptError, Rationale};

/// Everything rationale synthesis needs.
pub struct Synthesizer<'a> {
    pub model: &'a dyn ChatModel,
    pub library: &'a ComponentLibrary,
    pub taxonomy: &'a LabelTaxonomy,
    pub decoding: DecodingConfig,
    /// Self-consistency samples per exemplar.
    pub samples: usize,
    pub parallelism: usize,
    pub budget: &'a CallBudget,
}

/// The conversation used to sample a reasoning chain for `text`.
pub fn rationale_prompt(library: &ComponentLibrary, taxonomy: &LabelTaxonomy, text: &str) -> Result<Vec<ChatMessage>, PromptError> {
    let base = library.get(ids::BASE_INSTRUCTION)?;
    let space = label_space_summary(taxonomy);
    let mut system = render_template(&base.id, &base.body, &[("label_space", &space)])?;
    system.push_str("\n\n");
    system.push_str(&library.get(ids::COT_STEPS)?.body);
    let user = library
        .get(ids::AUTOCOT_USER)?
        .render(&[("input_text", text), ("label_space", &space)])?;
    Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
}

/// Reasoning text of a reply: everything before its last `Final Output:`.
fn chain_of(reply: &str) -> String {
    match reply.rfind("Final Output:") {
        Some(pos) => reply[..pos].trim().to_string(),
        None => reply.trim().to_string(),
    }
}

/// Draws `samples` reasoning chains for one exemplar.
///
/// Sample `i` uses seed `derive_seed(decoding.seed, i)`. Replies that carry
/// no label are dropped; replies with an out-of-taxonomy label are kept as
/// disagreeing. Fails if no sample produced a label.
pub fn sample_rationales(syn: &Synthesizer<'_>, exemplar: &AnnotatedMessage) -> Result<Vec<Rationale>, PromptError> {
    let m = syn.samples;
    if m == 0 {
        return Err(PromptError::Contract("at least one rationale sample is required".into()));
    }
    if m > 1 && syn.decoding.temperature <= 0.0 {
        return Err(PromptError::Contract(
            "several rationale samples need a positive temperature".into(),
        ));
    }
    let messages = rationale_prompt(syn.library, syn.taxonomy, &exemplar.text)?;
    if !syn.budget.try_reserve(m) {
        return Err(GatewayError::BudgetExhausted { limit: syn.budget.limit() }.into());
    }
    let indices: Vec<usize> = (0..m).collect();
    let replies = run_parallel(syn.parallelism, &indices, |_, &i| {
        let decoding = syn.decoding.with_seed(derive_seed(syn.decoding.seed, i as u64));
        syn.model.complete(&messages, &decoding)
    });

    let mut out = Vec::new();
    let mut first_error = None;
    for (i, reply) in replies.into_iter().enumerate() {
        let text = match reply {
            Ok(c) => c.text,
            Err(e @ (GatewayError::Request(_) | GatewayError::Config(_))) => return Err(e.into()),
            Err(e) => {
                first_error.get_or_insert(e.to_string());
                continue;
            }
        };
        let label = match parse_frame_response(&text, syn.taxonomy) {
            Ok(l) => l,
            Err(ParseFailure::InvalidLabel(l)) => l,
            Err(ParseFailure::Unparseable) => continue,
        };
        out.push(Rationale {
            chain: chain_of(&text),
            agreed: label == exemplar.label,
            final_label: label,
            sample: i,
            samples_drawn: m,
        });
    }
    if out.is_empty() {
        return Err(PromptError::Synthesis {
            id: exemplar.id.clone(),
            message: first_error.unwrap_or_else(|| format!("all {m} samples were unparseable")),
        });
    }
    Ok(out)
}

/// Shortest agreeing chain; ties go to the earliest sample.
pub fn filter_rationales(rationales: &[Rationale]) -> Option<Rationale> {
    rationales
        .iter()
        .filter(|r| r.agreed)
        .min_by_key(|r| (r.chain.chars().count(), r.sample))
        .cloned()
}

pub struct AutoCotOutcome {
    /// One block per input exemplar, in input order.
    pub blocks: Vec<ExemplarBlock>,
    /// Exemplars whose synthesis failed, with the reason.
    pub failures: Vec<(String, String)>,
}

impl AutoCotOutcome {
    pub fn cot_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.rationale.is_some()).count()
    }
}

/// Attaches a filtered rationale to each exemplar, falling back to the
/// plain form when none agrees or synthesis fails.
pub fn build_auto_cot_exemplars(syn: &Synthesizer<'_>, exemplars: &[AnnotatedMessage]) -> Result<AutoCotOutcome, PromptError> {
    if exemplars.is_empty() {
        return Err(PromptError::Contract("no exemplars to synthesize rationales for".into()));
    }
    let mut blocks = Vec::with_capacity(exemplars.len());
    let mut failures = Vec::new();
    for ex in exemplars {
        let picked = match sample_rationales(syn, ex) {
            Ok(rs) => filter_rationales(&rs),
            Err(e @ PromptError::Contract(_)) => return Err(e),
            Err(e) => {
                failures.push((ex.id.clone(), e.to_string()));
                None
            }
        };
        blocks.push(match picked {
            Some(r) => ExemplarBlock::with_rationale(ex.clone(), r),
            None => ExemplarBlock::plain(ex.clone()),
        });
    }
    Ok(AutoCotOutcome { blocks, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockModel, MockRuleSet};
    use crate::schema::FrameLabel;

    fn r(chain: &str, sample: usize, agreed: bool) -> Rationale {
        Rationale {
            chain: chain.into(),
            final_label: FrameLabel::new("a", "b", "c"),
            sample,
            samples_drawn: 3,
            agreed,
        }
    }

    #[test]
    fn filter_picks_shortest_agreeing() {
        let rs = [r(&"x".repeat(40), 0, true), r(&"x".repeat(12), 1, true), r("x", 2, false)];
        assert_eq!(filter_rationales(&rs).unwrap().sample, 1);
        let tie = [r("abc", 0, false), r("abc", 1, true), r("xyz", 2, true)];
        assert_eq!(filter_rationales(&tie).unwrap().sample, 1);
        assert!(filter_rationales(&[r("a", 0, false)]).is_none());
    }

    #[test]
    fn gold_and_never_gold() {
        let tax = LabelTaxonomy::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/taxonomy.json")).unwrap();
        let lib = ComponentLibrary::bundled().unwrap();
        let ex = AnnotatedMessage {
            id: "e1".into(),
            text: "Khách đi vắng nên không nhận hàng.".into(),
            label: FrameLabel::new("Customer", "Unavailable", "On Vacation"),
        };
        let key = [(ex.text.clone(), ex.label.clone())];
        let budget = CallBudget::unlimited();
        for (rules, agreed) in [(r#"{"fallback": "{{gold_cot}}"}"#, 3), (r#"{"fallback": "{{not_gold_cot}}"}"#, 0)] {
            let model = MockModel::new("m", MockRuleSet::from_jsonl(rules).unwrap(), &tax).with_answer_key(key.clone());
            let syn = Synthesizer {
                model: &model,
                library: &lib,
                taxonomy: &tax,
                decoding: DecodingConfig::default(),
                samples: 3,
                parallelism: 2,
                budget: &budget,
            };
            let rs = sample_rationales(&syn, &ex).unwrap();
            assert_eq!(rs.len(), 3);
            assert_eq!(rs.iter().filter(|r| r.agreed).count(), agreed);
            assert!(rs[0].chain.starts_with("Step 1: Actor ="));
        }
        assert_eq!(budget.used(), 6);
    }
}
