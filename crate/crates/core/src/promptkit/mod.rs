//! Prompt components, candidate descriptions and deterministic rendering.

mod autocot;
mod library;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedMessage;
use crate::gateway::{ChatMessage, GatewayError};
use crate::schema::{FrameLabel, LabelForm, LabelTaxonomy};

pub use autocot::{build_auto_cot_exemplars, filter_rationales, rationale_prompt, sample_rationales, AutoCotOutcome, Synthesizer};
pub use library::{ComponentKind, ComponentLibrary, Manifest, ManifestEntry, PromptComponent};
pub(crate) use library::render_template;

/// Ids of the components the renderer relies on.
pub mod ids {
    pub const BASE_INSTRUCTION: &str = "base_instruction";
    pub const DISAMBIGUATION: &str = "disambiguation_clause";
    pub const COT_STEPS: &str = "cot_steps";
    pub const AUTOCOT_USER: &str = "autocot_user";
    pub const ZERO_SHOT_USER: &str = "zero_shot_user";
    pub const FEWSHOT_USER: &str = "fewshot_user";
    pub const RAG_USER: &str = "rag_user";
    pub const REFINE: &str = "refine";
    pub const DEBATE: &str = "debate";
    pub const MANUAL_EXEMPLARS: &str = "manual_exemplars";
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("component library: {0}")]
    Library(String),
    #[error("component file {file} has hash {actual}, manifest expects {expected}")]
    HashMismatch { file: String, expected: String, actual: String },
    #[error("component `{component}` has unresolved placeholder `{placeholder}`")]
    Template { component: String, placeholder: String },
    #[error("prompt contract violated: {0}")]
    Contract(String),
    #[error("rationale synthesis failed for `{id}`: {message}")]
    Synthesis { id: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    FewShotManual,
    Cot,
    AutoCot,
    RagK,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::ZeroShot,
        Strategy::FewShotManual,
        Strategy::Cot,
        Strategy::AutoCot,
        Strategy::RagK,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::FewShotManual => "few_shot_manual",
            Strategy::Cot => "cot",
            Strategy::AutoCot => "auto_cot",
            Strategy::RagK => "rag_k",
        }
    }

    pub fn parse(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How much step-by-step reasoning the rendered prompt asks for.
///
/// `Cot` appends the reasoning-steps component to the system message.
/// `AutoCot` does the same and renders retrieved exemplars with reasoning
/// chains as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotMode {
    #[default]
    Plain,
    Cot,
    AutoCot,
}

impl CotMode {
    /// plain → cot → auto_cot → plain.
    pub fn next(self) -> CotMode {
        match self {
            CotMode::Plain => CotMode::Cot,
            CotMode::Cot => CotMode::AutoCot,
            CotMode::AutoCot => CotMode::Plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub chain: String,
    pub final_label: FrameLabel,
    /// Zero-based sample index this rationale came from.
    pub sample: usize,
    pub samples_drawn: usize,
    pub agreed: bool,
}

impl Rationale {
    /// A reasoning chain spelled out from a known label.
    pub fn from_label(label: &FrameLabel) -> Self {
        Rationale {
            chain: format!(
                "Step 1: Actor = {}\nStep 2: Reason = {}\nStep 3: Cause = {}",
                label.actor, label.reason, label.cause
            ),
            final_label: label.clone(),
            sample: 0,
            samples_drawn: 1,
            agreed: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderedForm {
    Plain,
    Cot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarBlock {
    pub message: AnnotatedMessage,
    pub rationale: Option<Rationale>,
    pub rendered_form: RenderedForm,
}

impl ExemplarBlock {
    pub fn plain(message: AnnotatedMessage) -> Self {
        ExemplarBlock {
            message,
            rationale: None,
            rendered_form: RenderedForm::Plain,
        }
    }

    pub fn with_rationale(message: AnnotatedMessage, rationale: Rationale) -> Self {
        ExemplarBlock {
            message,
            rationale: Some(rationale),
            rendered_form: RenderedForm::Cot,
        }
    }

    fn check(&self) -> Result<(), PromptError> {
        match (&self.rationale, self.rendered_form) {
            (None, RenderedForm::Plain) => Ok(()),
            (Some(r), RenderedForm::Cot) if r.agreed && r.final_label == self.message.label => Ok(()),
            (Some(_), RenderedForm::Cot) => Err(PromptError::Contract(format!(
                "exemplar `{}` carries a rationale that disagrees with its label",
                self.message.id
            ))),
            _ => Err(PromptError::Contract(format!(
                "exemplar `{}` has a rationale only in cot form",
                self.message.id
            ))),
        }
    }

    fn render(&self, header: &str, taxonomy: &LabelTaxonomy) -> Result<String, PromptError> {
        let output = taxonomy
            .render(&self.message.label, LabelForm::Tuple)
            .map_err(|e| PromptError::Contract(e.to_string()))?;
        let mut out = format!("{header}\nText: \"{}\"\n", self.message.text);
        if let Some(r) = &self.rationale {
            out.push_str("Reasoning:\n");
            out.push_str(&r.chain);
            out.push('\n');
        }
        out.push_str("Output: ");
        out.push_str(&output);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub round: usize,
    pub parent: Option<String>,
    pub transformation: String,
    /// Operator or fallback details.
    #[serde(default)]
    pub detail: String,
    /// Set when the intended transformation failed and a fallback was used.
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: String,
    pub strategy: Strategy,
    /// Instruction template; may contain `{{label_space}}`.
    pub instruction: String,
    pub static_exemplars: Vec<ExemplarBlock>,
    pub k: usize,
    /// Permutation over exemplar slots; empty means identity.
    pub exemplar_order: Vec<usize>,
    pub cot_mode: CotMode,
    pub provenance: Provenance,
}

impl PromptCandidate {
    /// A candidate with no exemplars and default rendering for `strategy`.
    pub fn new(id: impl Into<String>, strategy: Strategy, instruction: impl Into<String>, k: usize) -> Self {
        PromptCandidate {
            id: id.into(),
            strategy,
            instruction: instruction.into(),
            static_exemplars: Vec::new(),
            k: if strategy == Strategy::RagK { k } else { 0 },
            exemplar_order: Vec::new(),
            cot_mode: match strategy {
                Strategy::Cot => CotMode::Cot,
                Strategy::AutoCot => CotMode::AutoCot,
                _ => CotMode::Plain,
            },
            provenance: Provenance {
                round: 0,
                parent: None,
                transformation: "seed".into(),
                detail: String::new(),
                degraded: false,
            },
        }
    }

    pub fn with_exemplars(mut self, blocks: Vec<ExemplarBlock>) -> Self {
        self.static_exemplars = blocks;
        self
    }

    /// Number of exemplar positions the permutation ranges over.
    pub fn slots(&self) -> usize {
        if self.strategy == Strategy::RagK {
            self.k
        } else {
            self.static_exemplars.len()
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let fail = |m: String| Err(PromptError::Contract(format!("candidate `{}`: {m}", self.id)));
        if self.instruction.trim().is_empty() {
            return fail("empty instruction".into());
        }
        if self.strategy != Strategy::RagK && self.k != 0 {
            return fail(format!("strategy {} must have k = 0", self.strategy));
        }
        if self.strategy == Strategy::RagK && !self.static_exemplars.is_empty() {
            return fail("rag_k takes exemplars from retrieval only".into());
        }
        if self.strategy == Strategy::ZeroShot && !self.static_exemplars.is_empty() {
            return fail("zero_shot takes no exemplars".into());
        }
        if !self.exemplar_order.is_empty() {
            let mut seen = vec![false; self.slots()];
            if self.exemplar_order.len() != seen.len() {
                return fail("exemplar order is not a permutation of the slots".into());
            }
            for &i in &self.exemplar_order {
                if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                    return fail("exemplar order is not a permutation of the slots".into());
                }
            }
        }
        for b in &self.static_exemplars {
            b.check()?;
        }
        Ok(())
    }

    /// Applies the permutation to `n` available exemplars.
    ///
    /// Slots beyond `n` (fewer retrieved than `k`) are skipped.
    pub fn order_indices(&self, n: usize) -> Vec<usize> {
        if self.exemplar_order.is_empty() {
            (0..n).collect()
        } else {
            self.exemplar_order.iter().copied().filter(|&i| i < n).collect()
        }
    }
}

/// Level vocabularies plus leaf counts, for the system message.
pub fn label_space_summary(taxonomy: &LabelTaxonomy) -> String {
    let labels = taxonomy.enumerate_labels();
    let mut causes: Vec<&str> = labels.iter().map(|l| l.cause.as_str()).collect();
    causes.sort_unstable();
    causes.dedup();
    format!(
        "The frame label has three levels:\n- Actor ({})\n- Reason ({})\n- Fine-grained Cause ({} distinct causes; {} labels in total)",
        taxonomy.actor_names().join(", "),
        taxonomy.reason_names().join(", "),
        causes.len(),
        taxonomy.size()
    )
}

const LABEL_SPACE: &str = "{{label_space}}";

/// Instruction text as shown to an optimizer model, label space omitted.
pub fn instruction_display(instruction: &str) -> String {
    instruction
        .replace(&format!("{LABEL_SPACE}\n"), "")
        .replace(LABEL_SPACE, "")
        .trim()
        .to_string()
}

/// Checks that an instruction only uses the label-space placeholder.
pub fn check_instruction(instruction: &str) -> Result<(), PromptError> {
    if instruction.trim().is_empty() {
        return Err(PromptError::Contract("empty instruction".into()));
    }
    render_template("instruction", instruction, &[("label_space", "")]).map(|_| ())
}

/// Renders the system message for a candidate.
///
/// The label-space summary replaces `{{label_space}}`, or follows the
/// instruction when the placeholder is absent.
pub fn render_system(
    library: &ComponentLibrary,
    candidate: &PromptCandidate,
    taxonomy: &LabelTaxonomy,
) -> Result<String, PromptError> {
    let space = label_space_summary(taxonomy);
    let mut system = render_template(&candidate.id, &candidate.instruction, &[("label_space", &space)])?;
    if !candidate.instruction.contains(LABEL_SPACE) {
        system.push('\n');
        system.push_str(&space);
    }
    if candidate.cot_mode != CotMode::Plain {
        system.push_str("\n\n");
        system.push_str(&library.get(ids::COT_STEPS)?.body);
    }
    Ok(system)
}

/// Renders a candidate over one input.
///
/// The result is a system message (instruction, label space, optional
/// reasoning steps) followed by a user message with the exemplars in the
/// candidate's order and then the input. With no exemplars to show the
/// user message is the zero-shot one, so `rag_k` with `k = 0` renders the
/// same as `zero_shot`.
pub fn compose(
    library: &ComponentLibrary,
    candidate: &PromptCandidate,
    input_text: &str,
    retrieved: &[ExemplarBlock],
    taxonomy: &LabelTaxonomy,
) -> Result<Vec<ChatMessage>, PromptError> {
    candidate.validate()?;
    let (source, header, template) = if candidate.strategy == Strategy::RagK {
        if retrieved.len() > candidate.k {
            return Err(PromptError::Contract(format!(
                "{} exemplars retrieved for k = {}",
                retrieved.len(),
                candidate.k
            )));
        }
        (retrieved, "Retrieved Example", ids::RAG_USER)
    } else {
        if !retrieved.is_empty() {
            return Err(PromptError::Contract(format!(
                "strategy {} does not take retrieved exemplars",
                candidate.strategy
            )));
        }
        (candidate.static_exemplars.as_slice(), "Example", ids::FEWSHOT_USER)
    };
    for b in source {
        b.check()?;
    }
    let order = candidate.order_indices(source.len());
    let system = render_system(library, candidate, taxonomy)?;
    let user = if order.is_empty() {
        library.get(ids::ZERO_SHOT_USER)?.render(&[("input_text", input_text)])?
    } else {
        let blocks = order
            .iter()
            .enumerate()
            .map(|(pos, &i)| source[i].render(&format!("{header} {}:", pos + 1), taxonomy))
            .collect::<Result<Vec<_>, _>>()?;
        library
            .get(template)?
            .render(&[("exemplars", &blocks.join("\n\n")), ("input_text", input_text)])?
    };
    Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
}

/// Manual exemplars shipped in the library.
pub fn manual_exemplars(library: &ComponentLibrary, taxonomy: &LabelTaxonomy) -> Result<Vec<AnnotatedMessage>, PromptError> {
    let body = &library.get(ids::MANUAL_EXEMPLARS)?.body;
    let ingested = crate::corpus::ingest_str(body, taxonomy);
    if let Some(r) = ingested.report.rejections.first() {
        return Err(PromptError::Library(format!("manual exemplar line {}: {}", r.line, r.error)));
    }
    Ok(ingested.messages)
}
