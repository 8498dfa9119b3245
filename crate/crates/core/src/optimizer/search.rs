//! Candidate generation: seeded mutation, error-driven refinement and
//! debate over prompt variants.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ErrorCase, OptimizerConfig, OptimizerError, Predicted, SolutionPair};
use crate::gateway::{CallBudget, ChatMessage, ChatModel, DecodingConfig, GatewayError};
use crate::hashing::derive_seed;
use crate::promptkit::{check_instruction, ids, instruction_display, ComponentLibrary, PromptCandidate, Strategy};
use crate::schema::{LabelForm, LabelTaxonomy, Level};

pub const REFINED_MARKER: &str = "Refined Prompt:";
pub const DEBATE_MARKER: &str = "Final Improved Prompt:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MutationOp {
    Reorder,
    Specificity,
    CotSwitch,
}

impl MutationOp {
    pub const ALL: [MutationOp; 3] = [MutationOp::Reorder, MutationOp::Specificity, MutationOp::CotSwitch];

    pub fn name(self) -> &'static str {
        match self {
            MutationOp::Reorder => "order",
            MutationOp::Specificity => "specificity",
            MutationOp::CotSwitch => "cot",
        }
    }
}

/// Applies one operator. The result keeps the input's id and round; its
/// parent is the input.
pub fn apply_mutation(
    library: &ComponentLibrary,
    candidate: &PromptCandidate,
    op: MutationOp,
    rng: &mut ChaCha8Rng,
) -> Result<PromptCandidate, OptimizerError> {
    let mut out = candidate.clone();
    match op {
        MutationOp::Reorder => {
            let mut order = candidate.order_indices(candidate.slots());
            order.shuffle(rng);
            out.exemplar_order = order;
        }
        MutationOp::Specificity => {
            let clause = format!("\n{}", library.get(ids::DISAMBIGUATION)?.body);
            out.instruction = match candidate.instruction.strip_suffix(&clause) {
                Some(stripped) => stripped.to_string(),
                None => format!("{}{clause}", candidate.instruction),
            };
        }
        MutationOp::CotSwitch => out.cot_mode = candidate.cot_mode.next(),
    }
    out.provenance.parent = Some(candidate.id.clone());
    out.provenance.transformation = "mutate".into();
    out.provenance.detail = op.name().into();
    out.provenance.degraded = false;
    Ok(out)
}

/// Operator picked by `seed`: the first draw of `random_range(0..3)`.
pub fn choose_operator(seed: u64) -> MutationOp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MutationOp::ALL[rng.random_range(0..MutationOp::ALL.len())]
}

/// Applies exactly one seeded-random operator.
pub fn mutate(library: &ComponentLibrary, candidate: &PromptCandidate, seed: u64) -> Result<PromptCandidate, OptimizerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = MutationOp::ALL[rng.random_range(0..MutationOp::ALL.len())];
    apply_mutation(library, candidate, op, &mut rng)
}

/// The optimizer-side model and what it needs.
pub struct OptimizerModel<'a> {
    pub model: &'a dyn ChatModel,
    pub library: &'a ComponentLibrary,
    pub taxonomy: &'a LabelTaxonomy,
    pub decoding: DecodingConfig,
    pub budget: &'a CallBudget,
}

impl OptimizerModel<'_> {
    fn ask(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        if !self.budget.try_reserve(1) {
            return Err(GatewayError::BudgetExhausted { limit: self.budget.limit() });
        }
        self.model.complete(messages, &self.decoding).map(|c| c.text)
    }
}

fn pattern_key(levels: &[Level]) -> u8 {
    levels.iter().fold(0, |acc, l| acc | (1 << (*l as u8)))
}

/// Up to `max_cases` cases, most frequent wrong-level pattern first, then
/// by message id.
pub fn select_error_cases(cases: &[ErrorCase], max_cases: usize) -> Vec<&ErrorCase> {
    let mut freq: HashMap<u8, usize> = HashMap::new();
    for c in cases {
        *freq.entry(pattern_key(&c.wrong_levels)).or_default() += 1;
    }
    let mut sorted: Vec<&ErrorCase> = cases.iter().collect();
    sorted.sort_by(|a, b| {
        let fa = freq[&pattern_key(&a.wrong_levels)];
        let fb = freq[&pattern_key(&b.wrong_levels)];
        fb.cmp(&fa).then_with(|| a.message.id.cmp(&b.message.id))
    });
    sorted.truncate(max_cases);
    sorted
}

fn render_case(i: usize, case: &ErrorCase, taxonomy: &LabelTaxonomy) -> String {
    let tuple = |l| taxonomy.render(l, LabelForm::Tuple).unwrap_or_default();
    let predicted = match &case.predicted {
        Predicted::Label(l) => tuple(l),
        Predicted::Error(e) => format!("<{}>", e.as_str()),
    };
    let wrong: Vec<&str> = case.wrong_levels.iter().map(|l| l.name()).collect();
    format!(
        "Case {i}:\nText: \"{}\"\nPredicted: {predicted}\nGold: {}\nWrong levels: {}",
        case.message.text,
        tuple(&case.message.label),
        wrong.join(", ")
    )
}

/// The conversation asking the optimizer to refine `candidate`.
pub fn refine_prompt(
    library: &ComponentLibrary,
    taxonomy: &LabelTaxonomy,
    candidate: &PromptCandidate,
    cases: &[&ErrorCase],
) -> Result<Vec<ChatMessage>, OptimizerError> {
    let rendered: Vec<String> = cases.iter().enumerate().map(|(i, c)| render_case(i + 1, c, taxonomy)).collect();
    let body = library.get(ids::REFINE)?.render(&[
        ("prompt_variants", &instruction_display(&candidate.instruction)),
        ("error_cases", &rendered.join("\n\n")),
    ])?;
    Ok(vec![ChatMessage::user(body)])
}

/// The conversation asking the optimizer to merge `variants`.
pub fn debate_prompt(library: &ComponentLibrary, variants: &[&PromptCandidate]) -> Result<Vec<ChatMessage>, OptimizerError> {
    let listed: Vec<String> = variants
        .iter()
        .enumerate()
        .map(|(i, v)| format!("Prompt {}: \"{}\"", variant_letter(i), instruction_display(&v.instruction)))
        .collect();
    let body = library.get(ids::DEBATE)?.render(&[("prompt_variants", &listed.join("\n"))])?;
    Ok(vec![ChatMessage::user(body)])
}

fn variant_letter(i: usize) -> String {
    let mut s = String::new();
    let mut n = i;
    loop {
        s.insert(0, (b'A' + (n % 26) as u8) as char);
        if n < 26 {
            return s;
        }
        n = n / 26 - 1;
    }
}

/// Instruction text following the last `marker` in `reply`.
///
/// The block is either enclosed in `<prompt>` tags or in double quotes
/// (straight or curly).
pub fn extract_block(reply: &str, marker: &str) -> Option<String> {
    let rest = &reply[reply.rfind(marker)? + marker.len()..];
    let block = if let Some(start) = rest.find("<prompt>") {
        let inner = &rest[start + "<prompt>".len()..];
        &inner[..inner.find("</prompt>")?]
    } else {
        let start = rest.find(['"', '“'])?;
        let open = rest[start..].chars().next()?;
        let close = if open == '“' { '”' } else { '"' };
        let inner = &rest[start + open.len_utf8()..];
        &inner[..inner.rfind(close)?]
    };
    let block = block.trim();
    (!block.is_empty()).then(|| block.to_string())
}

fn extracted_instruction(reply: &str, marker: &str) -> Result<String, OptimizerError> {
    let block = extract_block(reply, marker)
        .ok_or_else(|| OptimizerError::Extraction(format!("reply has no block after `{marker}`")))?;
    check_instruction(&block).map_err(|e| OptimizerError::Extraction(e.to_string()))?;
    Ok(block)
}

/// Asks the optimizer for an instruction that avoids the given errors.
///
/// With no error cases the candidate comes back unchanged (a no-op
/// refinement) and no call is made.
pub fn refine_with_errors(
    opt: &OptimizerModel<'_>,
    candidate: &PromptCandidate,
    error_cases: &[ErrorCase],
    max_cases: usize,
) -> Result<PromptCandidate, OptimizerError> {
    let mut out = candidate.clone();
    out.provenance.parent = Some(candidate.id.clone());
    out.provenance.transformation = "refine".into();
    out.provenance.degraded = false;
    if error_cases.is_empty() || max_cases == 0 {
        out.provenance.detail = "no-op".into();
        return Ok(out);
    }
    let cases = select_error_cases(error_cases, max_cases);
    let reply = opt.ask(&refine_prompt(opt.library, opt.taxonomy, candidate, &cases)?)?;
    out.instruction = extracted_instruction(&reply, REFINED_MARKER)?;
    out.provenance.detail = format!("{} error case(s)", cases.len());
    Ok(out)
}

/// Merges variants through a debate prompt.
///
/// Strategy, exemplars and `k` come from the best-scoring variant (the
/// first among equals; unscored variants rank last). If the reply has no
/// usable prompt, or the endpoint fails, that variant is returned
/// unchanged and flagged as degraded.
pub fn debate(
    opt: &OptimizerModel<'_>,
    variants: &[(&PromptCandidate, Option<f64>)],
) -> Result<PromptCandidate, OptimizerError> {
    if variants.len() < 2 {
        return Err(OptimizerError::Config("debate needs at least two variants".into()));
    }
    let mut best = 0;
    for (i, (_, score)) in variants.iter().enumerate() {
        let cur = variants[best].1.unwrap_or(f64::NEG_INFINITY);
        if score.unwrap_or(f64::NEG_INFINITY) > cur {
            best = i;
        }
    }
    let base = variants[best].0;
    let mut out = base.clone();
    out.provenance.parent = Some(base.id.clone());
    out.provenance.transformation = "debate".into();
    out.provenance.degraded = false;
    out.provenance.detail = format!("{} variants", variants.len());
    let prompt = debate_prompt(opt.library, &variants.iter().map(|(c, _)| *c).collect::<Vec<_>>())?;
    let outcome = opt
        .ask(&prompt)
        .map_err(OptimizerError::from)
        .and_then(|reply| extracted_instruction(&reply, DEBATE_MARKER));
    match outcome {
        Ok(instruction) => out.instruction = instruction,
        Err(OptimizerError::Gateway(e @ GatewayError::BudgetExhausted { .. })) => return Err(e.into()),
        Err(e) => {
            out.provenance.degraded = true;
            out.provenance.detail = format!("fallback to best variant: {e}");
        }
    }
    Ok(out)
}

fn mutation_seed(config: &OptimizerConfig, round: usize, slot: usize) -> u64 {
    derive_seed(derive_seed(config.mutation_seed, round as u64), slot as u64)
}

fn stamp(mut c: PromptCandidate, round: usize, slot: usize) -> PromptCandidate {
    c.id = format!("r{round}-c{slot}");
    c.provenance.round = round;
    c
}

fn is_budget(e: &OptimizerError) -> bool {
    matches!(e, OptimizerError::Gateway(GatewayError::BudgetExhausted { .. }))
}

/// Candidates for one round.
///
/// Round 1 seeds one `rag_k` candidate per entry of `k_options` with the
/// base instruction. Later rounds refine, mutate and debate around the
/// incumbent; further slots hold extra mutations. A failed refinement is
/// replaced by a mutation flagged as degraded.
pub fn generate_candidates(
    round: usize,
    incumbent: Option<&SolutionPair>,
    opt: &OptimizerModel<'_>,
    config: &OptimizerConfig,
) -> Result<Vec<PromptCandidate>, OptimizerError> {
    if round == 0 {
        return Err(OptimizerError::Config("rounds are numbered from 1".into()));
    }
    let n = config.candidates_per_round;
    let mut out = Vec::with_capacity(n);
    if round == 1 {
        let instruction = opt.library.get(ids::BASE_INSTRUCTION)?.body.clone();
        for (slot, &k) in config.k_options.iter().take(n).enumerate() {
            let mut c = PromptCandidate::new("", Strategy::RagK, instruction.clone(), k);
            c.provenance.detail = format!("k={k}");
            out.push(stamp(c, round, slot + 1));
        }
        while out.len() < n {
            let slot = out.len() + 1;
            let parent = out[(slot - 1) % config.k_options.len().max(1)].clone();
            out.push(stamp(mutate(opt.library, &parent, mutation_seed(config, round, slot))?, round, slot));
        }
        return Ok(out);
    }

    let inc = incumbent.ok_or_else(|| OptimizerError::Config(format!("round {round} needs an incumbent")))?;
    let refined = match refine_with_errors(opt, &inc.candidate, &inc.report.error_cases, config.max_cases) {
        Ok(c) => c,
        Err(e) if is_budget(&e) => return Err(e),
        Err(e) => {
            let mut m = mutate(opt.library, &inc.candidate, mutation_seed(config, round, 1))?;
            m.provenance.degraded = true;
            m.provenance.detail = format!("{} (refinement failed: {e})", m.provenance.detail);
            m
        }
    };
    out.push(stamp(refined, round, 1));
    if n >= 2 {
        out.push(stamp(mutate(opt.library, &inc.candidate, mutation_seed(config, round, 2))?, round, 2));
    }
    if n >= 3 {
        let variants = [
            (&inc.candidate, Some(inc.report.exact_match)),
            (&out[0], None),
            (&out[1], None),
        ];
        let merged = debate(opt, &variants)?;
        out.push(stamp(merged, round, 3));
    }
    while out.len() < n {
        let slot = out.len() + 1;
        out.push(stamp(mutate(opt.library, &inc.candidate, mutation_seed(config, round, slot))?, round, slot));
    }
    out.truncate(n);
    Ok(out)
}
