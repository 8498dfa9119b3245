//! Drives the scripted mock model: rule matching, answer-key placeholders,
//! seeded noise, and the single re-ask on unparseable output.
//!
//!     cargo run --example mock_gateway

use promptforge::gateway::{
    request_label, CallBudget, ChatMessage, ChatModel, DecodingConfig, MockModel, MockRuleSet,
};
use promptforge::schema::{FrameLabel, LabelTaxonomy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let taxonomy = LabelTaxonomy::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/taxonomy.json"))?;
    let rules = MockRuleSet::from_jsonl(
        r#"{"match": "Khách không nhận", "respond": "(\"Customer\", \"Refused Delivery\", \"Late Delivery\")"}
{"match": "giao hàng", "respond": "{{gold}}", "noise": 0.5}
{"match": "^Text: \"\\?", "respond": "no idea"}
{"fallback": "FIXED"}"#,
    )?;
    let text = "giao hàng thất bại do thiếu số điện thoại";
    let gold = FrameLabel::new("Delivery Service", "Incorrect Information", "Missing Contact Info");
    let model = MockModel::new("demo", rules, &taxonomy).with_answer_key([(text.to_string(), gold)]);
    let decoding = DecodingConfig::default();

    let ask = |user: &str, seed: u64| model.complete(&[ChatMessage::user(user)], &decoding.with_seed(seed));
    println!("rule 1:   {}", ask("Text: \"Khách không nhận hàng\"", 1)?.text);
    println!("fallback: {}", ask("Text: \"hello\"", 1)?.text);
    for seed in 0..4 {
        println!("noisy seed {seed}: {}", ask(&format!("Text: \"{text}\""), seed)?.text);
    }

    let budget = CallBudget::new(10);
    let attempt = request_label(&model, &[ChatMessage::user("Text: \"?\"")], &decoding, &taxonomy, &budget)?;
    println!(
        "\nunparseable reply: {:?} after {} call(s), last raw {:?}",
        attempt.label, attempt.calls, attempt.raw
    );
    Ok(())
}
