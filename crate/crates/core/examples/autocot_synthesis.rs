//! Synthesizes chain-of-thought exemplars by self-consistency sampling
//! against mock models that agree with gold always, never, or half the time.
//!
//!     cargo run --example autocot_synthesis -- [samples]

use promptforge::corpus;
use promptforge::gateway::{load_mock_rules, CallBudget, DecodingConfig, MockModel};
use promptforge::promptkit::{build_auto_cot_exemplars, ComponentLibrary, RenderedForm, Synthesizer};
use promptforge::schema::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let taxonomy = LabelTaxonomy::load(format!("{root}/taxonomy.json"))?;
    let library = ComponentLibrary::bundled()?;
    let messages = corpus::ingest(format!("{root}/dataset.jsonl"), &taxonomy)?.messages;
    let exemplars = &messages[..20];
    let key = || messages.iter().map(|m| (m.text.clone(), m.label.clone()));

    for mock in ["always_gold", "never_gold", "noisy_autocot"] {
        let rules = load_mock_rules(format!("{root}/mocks/{mock}.jsonl"))?;
        let model = MockModel::new(mock, rules, &taxonomy).with_answer_key(key());
        let budget = CallBudget::unlimited();
        let syn = Synthesizer {
            model: &model,
            library: &library,
            taxonomy: &taxonomy,
            decoding: DecodingConfig::default().with_seed(7),
            samples,
            parallelism: 4,
            budget: &budget,
        };
        let outcome = build_auto_cot_exemplars(&syn, exemplars)?;
        println!(
            "{mock:<14} cot {:>2} / plain {:>2}  calls {}",
            outcome.cot_count(),
            outcome.blocks.len() - outcome.cot_count(),
            budget.used()
        );
        if let Some(b) = outcome.blocks.iter().find(|b| b.rendered_form == RenderedForm::Cot) {
            let r = b.rationale.as_ref().expect("cot blocks carry a rationale");
            println!("  {} kept sample {} of {}:\n    {}", b.message.id, r.sample, r.samples_drawn, r.chain.replace('\n', "\n    "));
        }
    }
    Ok(())
}
