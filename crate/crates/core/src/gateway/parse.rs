use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use crate::schema::{FrameLabel, LabelTaxonomy, SchemaError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseFailure {
    /// No recognizable label form in the text.
    #[error("no label found in model output")]
    Unparseable,
    /// A well-formed triple that is not in the taxonomy.
    #[error("label `{0}` is not in the taxonomy")]
    InvalidLabel(FrameLabel),
}

static JSON_TUPLE: LazyLock<Regex> = LazyLock::new(|| {
    let s = r#""(?:[^"\\]|\\.)*""#;
    Regex::new(&format!(r"\(\s*({s})\s*,\s*({s})\s*,\s*({s})\s*\)")).expect("valid regex")
});

static CURLY_TUPLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\(\s*“([^”]*)”\s*,\s*“([^”]*)”\s*,\s*“([^”]*)”\s*\)").expect("valid regex")
});

/// Extracts the first structured object carrying string `actor`, `reason`
/// and `cause` keys.
pub(crate) fn first_object_triple(text: &str) -> Option<FrameLabel> {
    for (pos, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            let field = |k: &str| map.get(k).and_then(Value::as_str);
            if let (Some(a), Some(r), Some(c)) = (field("actor"), field("reason"), field("cause")) {
                return Some(FrameLabel::new(a, r, c));
            }
        }
    }
    None
}

/// Extracts the first quoted 3-tuple, with straight or curly quotes.
pub(crate) fn first_tuple_triple(text: &str) -> Option<FrameLabel> {
    let straight = JSON_TUPLE.captures(text).and_then(|c| {
        let part = |i: usize| serde_json::from_str::<String>(c.get(i).expect("group").as_str()).ok();
        Some((c.get(0)?.start(), FrameLabel::new(&part(1)?, &part(2)?, &part(3)?)))
    });
    let curly = CURLY_TUPLE.captures(text).map(|c| {
        let start = c.get(0).expect("match").start();
        (start, FrameLabel::new(&c[1], &c[2], &c[3]))
    });
    match (straight, curly) {
        (Some(a), Some(b)) => Some(if a.0 <= b.0 { a.1 } else { b.1 }),
        (a, b) => a.or(b).map(|x| x.1),
    }
}

fn judge(label: FrameLabel, taxonomy: &LabelTaxonomy) -> Result<FrameLabel, ParseFailure> {
    if taxonomy.validate_label(&label) {
        Ok(label)
    } else {
        Err(ParseFailure::InvalidLabel(label))
    }
}

/// Parses a model reply into a label.
///
/// Forms are tried in a fixed order and the first one found decides the
/// outcome: a structured object with actor/reason/cause keys, then a quoted
/// 3-tuple, then a flat delimiter-joined label after `Final Output:`.
pub fn parse_frame_response(text: &str, taxonomy: &LabelTaxonomy) -> Result<FrameLabel, ParseFailure> {
    if let Some(l) = first_object_triple(text) {
        return judge(l, taxonomy);
    }
    if let Some(l) = first_tuple_triple(text) {
        return judge(l, taxonomy);
    }
    if let Some(pos) = text.rfind("Final Output:") {
        let rest = &text[pos + "Final Output:".len()..];
        let line = rest.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
        return match taxonomy.parse_label_string(line) {
            Ok(l) => Ok(l),
            Err(SchemaError::UnknownLabel(l)) if l.is_complete() => Err(ParseFailure::InvalidLabel(l)),
            Err(_) => Err(ParseFailure::Unparseable),
        };
    }
    Err(ParseFailure::Unparseable)
}
