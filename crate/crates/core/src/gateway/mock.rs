//! Rule-driven stand-in for a hosted model.
//!
//! Rules are matched against the final user message; the first match wins
//! and a trailing fallback always matches. A reply is a template that may
//! reference the message being annotated, its gold label (through an
//! answer key), and the exemplars shown in the prompt:
//!
//! | placeholder       | expands to                                                    |
//! |-------------------|---------------------------------------------------------------|
//! | `{{input}}`       | the quoted text on the last line of the user message          |
//! | `{{gold}}`        | gold label of `{{input}}`, tuple form                         |
//! | `{{gold_object}}` | gold label, object form                                       |
//! | `{{gold_cot}}`    | step-by-step reasoning ending in `Final Output:` + gold        |
//! | `{{not_gold}}`    | the label after gold in enumeration order                     |
//! | `{{not_gold_cot}}`| as `{{gold_cot}}` for `{{not_gold}}`                           |
//! | `{{gold_sibling}}`| gold actor and reason with the next sibling cause             |
//! | `{{random}}`      | a uniformly drawn taxonomy label                              |
//! | `{{coupled}}`     | gold if any prompt exemplar shares the gold actor, else random|
//! | `{{exemplar_N}}`  | the N-th (1-based) exemplar `Output:` label, tuple form       |
//!
//! Gold placeholders render `UNKNOWN` when the input is not in the key.
//!
//! Randomness: each call seeds ChaCha8 with
//! `derive_seed(decoding.seed, fnv1a64(conversation))`, where the
//! conversation bytes are, per message, the role name, `0x1f`, the content
//! and `0x1e`. If the matched rule has a noise level, one `f64` is drawn
//! first; below the noise level the reply is a random label (one
//! `random_range(0..n)` draw over the enumerated labels) instead of the
//! template. Otherwise each `{{random}}`, and each `{{coupled}}` that does
//! not resolve to gold, draws one label index, left to right.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Deserialize;

use super::parse::{first_object_triple, first_tuple_triple};
use super::{check_request, whitespace_tokens, ChatMessage, ChatModel, Completion, DecodingConfig, GatewayError, Role, Usage};
use crate::hashing::{derive_seed, fnv1a64};
use crate::schema::{render_label, FrameLabel, LabelForm, LabelTaxonomy, DEFAULT_DELIMITER};

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([a-z_0-9]+)\}\}").expect("valid regex"));

const KNOWN: &[&str] = &[
    "input", "gold", "gold_object", "gold_cot", "not_gold", "not_gold_cot", "gold_sibling", "random", "coupled",
];

#[derive(Debug, Clone)]
pub enum Matcher {
    Substring(String),
    /// Patterns beginning with `^` are regular expressions.
    Pattern(Regex),
}

impl Matcher {
    fn parse(raw: &str) -> Result<Self, regex::Error> {
        if raw.starts_with('^') {
            Ok(Matcher::Pattern(Regex::new(raw)?))
        } else {
            Ok(Matcher::Substring(raw.to_string()))
        }
    }

    pub fn is_match(&self, text: &str) -> bool {
        match self {
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Pattern(r) => r.is_match(text),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRule {
    pub matcher: Matcher,
    pub respond: String,
    pub noise: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MockFallback {
    pub respond: String,
    pub noise: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MockRuleSet {
    pub rules: Vec<MockRule>,
    pub fallback: MockFallback,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleLine {
    #[serde(rename = "match")]
    matcher: Option<String>,
    respond: Option<String>,
    fallback: Option<String>,
    noise: Option<f64>,
}

fn check_template(index: usize, text: &str) -> Result<(), GatewayError> {
    for cap in PLACEHOLDER.captures_iter(text) {
        let name = &cap[1];
        let ok = KNOWN.contains(&name)
            || name
                .strip_prefix("exemplar_")
                .and_then(|n| n.parse::<usize>().ok())
                .is_some_and(|n| n >= 1);
        if !ok {
            return Err(GatewayError::RuleFormat {
                index,
                message: format!("unknown placeholder `{{{{{name}}}}}`"),
            });
        }
    }
    Ok(())
}

fn check_noise(index: usize, noise: Option<f64>) -> Result<(), GatewayError> {
    match noise {
        Some(p) if !(0.0..=1.0).contains(&p) => Err(GatewayError::RuleFormat {
            index,
            message: format!("noise {p} outside [0, 1]"),
        }),
        _ => Ok(()),
    }
}

impl MockRuleSet {
    /// Parses line-delimited rules; `index` in errors is 0-based over non-empty lines.
    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut rules = Vec::new();
        let mut fallback = None;
        for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let fmt = |message: String| GatewayError::RuleFormat { index, message };
            if fallback.is_some() {
                return Err(fmt("rules after the fallback are unreachable".into()));
            }
            let raw: RuleLine = serde_json::from_str(line).map_err(|e| fmt(e.to_string()))?;
            check_noise(index, raw.noise)?;
            match (raw.matcher, raw.respond, raw.fallback) {
                (Some(m), Some(respond), None) => {
                    check_template(index, &respond)?;
                    let matcher = Matcher::parse(&m).map_err(|e| fmt(format!("bad pattern: {e}")))?;
                    rules.push(MockRule { matcher, respond, noise: raw.noise });
                }
                (None, None, Some(respond)) => {
                    check_template(index, &respond)?;
                    fallback = Some(MockFallback { respond, noise: raw.noise });
                }
                _ => return Err(fmt("expected {match, respond} or {fallback}".into())),
            }
        }
        let fallback = fallback.ok_or_else(|| GatewayError::Config("mock rules have no fallback".into()))?;
        Ok(MockRuleSet { rules, fallback })
    }

    /// Rule count including the fallback.
    pub fn len(&self) -> usize {
        self.rules.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn select(&self, text: &str) -> (&str, Option<f64>) {
        self.rules
            .iter()
            .find(|r| r.matcher.is_match(text))
            .map(|r| (r.respond.as_str(), r.noise))
            .unwrap_or((self.fallback.respond.as_str(), self.fallback.noise))
    }
}

pub fn load_mock_rules(path: impl AsRef<Path>) -> Result<MockRuleSet, GatewayError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("cannot read mock rules {}: {e}", path.display())))?;
    MockRuleSet::from_jsonl(&text)
}

/// Step-by-step reply ending in a `Final Output:` object.
pub fn cot_response(label: &FrameLabel) -> String {
    format!(
        "Step 1: Actor = {}\nStep 2: Reason = {}\nStep 3: Cause = {}\nFinal Output: {}",
        label.actor,
        label.reason,
        label.cause,
        render_label(label, LabelForm::Object, DEFAULT_DELIMITER).unwrap_or_default()
    )
}

pub(crate) fn conversation_hash(messages: &[ChatMessage]) -> u64 {
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

/// Quoted text on the last non-empty line.
pub(crate) fn extract_input(user: &str) -> Option<&str> {
    let line = user.lines().rev().find(|l| !l.trim().is_empty())?;
    let start = line.find('"')?;
    let end = line.rfind('"')?;
    (end > start).then(|| &line[start + 1..end])
}

/// Labels on `Output:` lines, in order.
pub(crate) fn exemplar_outputs(user: &str) -> Vec<FrameLabel> {
    user.lines()
        .filter_map(|l| l.trim_start().strip_prefix("Output:"))
        .filter_map(|rest| first_tuple_triple(rest).or_else(|| first_object_triple(rest)))
        .collect()
}

pub struct MockModel {
    name: String,
    rules: MockRuleSet,
    labels: Vec<FrameLabel>,
    positions: HashMap<FrameLabel, usize>,
    answer_key: HashMap<String, FrameLabel>,
}

impl MockModel {
    pub fn new(name: impl Into<String>, rules: MockRuleSet, taxonomy: &LabelTaxonomy) -> Self {
        let labels = taxonomy.enumerate_labels().to_vec();
        let positions = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        MockModel {
            name: name.into(),
            rules,
            labels,
            positions,
            answer_key: HashMap::new(),
        }
    }

    /// Maps message text to gold label; the first entry for a text wins.
    pub fn with_answer_key(mut self, entries: impl IntoIterator<Item = (String, FrameLabel)>) -> Self {
        for (text, label) in entries {
            self.answer_key.entry(text).or_insert(label);
        }
        self
    }

    pub fn rules(&self) -> &MockRuleSet {
        &self.rules
    }

    fn random_label(&self, rng: &mut ChaCha8Rng) -> &FrameLabel {
        &self.labels[rng.random_range(0..self.labels.len())]
    }

    fn tuple(label: &FrameLabel) -> String {
        render_label(label, LabelForm::Tuple, DEFAULT_DELIMITER).unwrap_or_else(|_| "UNKNOWN".into())
    }

    fn render(&self, template: &str, user: &str, rng: &mut ChaCha8Rng) -> String {
        let input = extract_input(user);
        let gold = input.and_then(|t| self.answer_key.get(t));
        let not_gold = || {
            gold.and_then(|g| self.positions.get(g))
                .map(|&i| &self.labels[(i + 1) % self.labels.len()])
        };
        let mut cache: Option<Vec<FrameLabel>> = None;
        let mut exemplars = || cache.get_or_insert_with(|| exemplar_outputs(user)).clone();
        const UNKNOWN: &str = "UNKNOWN";

        PLACEHOLDER
            .replace_all(template, |cap: &regex::Captures<'_>| match &cap[1] {
                "input" => input.unwrap_or("").to_string(),
                "gold" => gold.map(Self::tuple).unwrap_or_else(|| UNKNOWN.into()),
                "gold_object" => gold
                    .and_then(|g| render_label(g, LabelForm::Object, DEFAULT_DELIMITER).ok())
                    .unwrap_or_else(|| UNKNOWN.into()),
                "gold_cot" => gold.map(cot_response).unwrap_or_else(|| UNKNOWN.into()),
                "not_gold" => not_gold().map(Self::tuple).unwrap_or_else(|| UNKNOWN.into()),
                "not_gold_cot" => not_gold().map(cot_response).unwrap_or_else(|| UNKNOWN.into()),
                "gold_sibling" => gold
                    .map(|g| {
                        let siblings: Vec<&FrameLabel> = self
                            .labels
                            .iter()
                            .filter(|l| l.actor == g.actor && l.reason == g.reason)
                            .collect();
                        let at = siblings.iter().position(|l| *l == g).unwrap_or(0);
                        Self::tuple(siblings[(at + 1) % siblings.len()])
                    })
                    .unwrap_or_else(|| UNKNOWN.into()),
                "random" => Self::tuple(self.random_label(rng)),
                "coupled" => match gold {
                    Some(g) if exemplars().iter().any(|e| e.actor == g.actor) => Self::tuple(g),
                    _ => Self::tuple(self.random_label(rng)),
                },
                other => {
                    let n: usize = other.trim_start_matches("exemplar_").parse().unwrap_or(0);
                    exemplars()
                        .get(n.wrapping_sub(1))
                        .map(Self::tuple)
                        .unwrap_or_else(|| UNKNOWN.into())
                }
            })
            .into_owned()
    }
}

impl ChatModel for MockModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, messages: &[ChatMessage], decoding: &DecodingConfig) -> Result<Completion, GatewayError> {
        check_request(messages, decoding)?;
        let started = Instant::now();
        let user = &messages.last().expect("checked non-empty").content;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(decoding.seed, conversation_hash(messages)));
        let (template, noise) = self.rules.select(user);
        let noisy = noise.is_some_and(|p| rng.random::<f64>() < p);
        let text = if noisy {
            Self::tuple(self.random_label(&mut rng))
        } else {
            self.render(template, user, &mut rng)
        };
        let usage = Usage {
            prompt_tokens: messages.iter().map(|m| whitespace_tokens(&m.content)).sum(),
            completion_tokens: whitespace_tokens(&text),
        };
        Ok(Completion {
            text,
            usage,
            latency: started.elapsed(),
            exchange: None,
        })
    }
}
