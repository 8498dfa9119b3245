mod common;

use promptforge::corpus::AnnotatedMessage;
use promptforge::gateway::{CallBudget, DecodingConfig, MockModel, MockRuleSet};
use promptforge::hashing::derive_seed;
use promptforge::promptkit::{
    build_auto_cot_exemplars, compose, filter_rationales, ids, manual_exemplars, rationale_prompt, sample_rationales,
    ComponentLibrary, CotMode, ExemplarBlock, PromptCandidate, PromptComponent, PromptError, Rationale, Strategy,
    Synthesizer,
};
use promptforge::schema::{FrameLabel, LabelTaxonomy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn msg(id: &str, text: &str, l: (&str, &str, &str)) -> AnnotatedMessage {
    AnnotatedMessage {
        id: id.into(),
        text: text.into(),
        label: FrameLabel::new(l.0, l.1, l.2),
    }
}

fn base(lib: &ComponentLibrary, strategy: Strategy, k: usize) -> PromptCandidate {
    PromptCandidate::new("c", strategy, lib.get(ids::BASE_INSTRUCTION).unwrap().body.clone(), k)
}

fn flatten(messages: &[promptforge::gateway::ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("[{}]\n{}", serde_json::to_value(m.role).unwrap().as_str().unwrap(), m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn rag_prompt_matches_golden() {
    let lib = common::library();
    let tax = common::taxonomy();
    let vacation = msg("x1", "Khách đi vắng nên không nhận hàng.", ("Customer", "Unavailable", "On Vacation"));
    let stock = msg("x2", "Shop báo hết hàng, hẹn tuần sau.", ("Shop", "Stock Issue", "Out of Stock"));
    let blocks = vec![
        ExemplarBlock::plain(vacation),
        ExemplarBlock::with_rationale(stock.clone(), Rationale::from_label(&stock.label)),
    ];
    let mut c = base(&lib, Strategy::RagK, 2);
    c.cot_mode = CotMode::Cot;
    c.exemplar_order = vec![1, 0];
    let got = flatten(&compose(&lib, &c, "Giao trễ vì mưa lớn", &blocks, &tax).unwrap());
    let want = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/compose_rag_k2.txt")).unwrap();
    assert_eq!(got, want.trim_end());
}

#[test]
fn zero_shot_and_rag_zero_render_alike() {
    let lib = common::library();
    let tax = common::taxonomy();
    for text in ["xin chào", "Khách không nghe máy", ""] {
        let z = compose(&lib, &base(&lib, Strategy::ZeroShot, 0), text, &[], &tax).unwrap();
        assert_eq!(z.len(), 2);
        assert_eq!(z[1].content, format!("Text: \"{text}\""));
        assert_eq!(compose(&lib, &base(&lib, Strategy::RagK, 0), text, &[], &tax).unwrap(), z);
    }
}

#[test]
fn few_shot_uses_static_exemplars() {
    let lib = common::library();
    let tax = common::taxonomy();
    let manual = manual_exemplars(&lib, &tax).unwrap();
    let c = base(&lib, Strategy::FewShotManual, 0).with_exemplars(manual.iter().cloned().map(ExemplarBlock::plain).collect());
    let user = &compose(&lib, &c, "q", &[], &tax).unwrap()[1].content;
    for (i, m) in manual.iter().enumerate() {
        assert!(user.contains(&format!("Example {}:\nText: \"{}\"", i + 1, m.text)));
    }
    assert!(user.ends_with("Now annotate the following text:\n\"q\""));
}

#[test]
fn library_rejects_bad_components() {
    let undeclared = "+++\nid = \"x\"\nkind = \"rag_template\"\nplaceholders = [\"exemplars\"]\n+++\n{{exemplars}} {{input_text}}";
    assert!(matches!(PromptComponent::parse(undeclared), Err(PromptError::Library(_))));
    let foreign = "+++\nid = \"x\"\nkind = \"instruction\"\nplaceholders = [\"input_text\"]\n+++\n{{input_text}}";
    assert!(matches!(PromptComponent::parse(foreign), Err(PromptError::Library(_))));
    assert!(PromptComponent::parse("no header").is_err());
    let ok = PromptComponent::parse("+++\nid = \"x\"\nkind = \"instruction\"\nplaceholders = [\"label_space\"]\n+++\nA {{label_space}}").unwrap();
    assert_eq!(ok.render(&[("label_space", "B")]).unwrap(), "A B");
    assert!(matches!(ok.render(&[]), Err(PromptError::Template { .. })));
}

#[test]
fn tampered_component_is_refused() {
    let src = ComponentLibrary::bundled_manifest();
    let dir = common::temp_dir();
    let manifest = dir.path().join(src.file_name().unwrap());
    std::fs::copy(&src, &manifest).unwrap();
    let dst_dir = dir.path().join("components");
    std::fs::create_dir_all(&dst_dir).unwrap();
    for e in std::fs::read_dir(src.parent().unwrap().join("components")).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), dst_dir.join(e.file_name())).unwrap();
    }
    assert_eq!(ComponentLibrary::load(&manifest).unwrap().len(), common::library().len());
    let target = dst_dir.join("cot_steps.txt");
    let text = std::fs::read_to_string(&target).unwrap();
    std::fs::write(&target, text.replace("step by step", "carefully")).unwrap();
    assert!(matches!(ComponentLibrary::load(&manifest), Err(PromptError::HashMismatch { .. })));
}

fn synth<'a>(model: &'a MockModel, lib: &'a ComponentLibrary, tax: &'a LabelTaxonomy, budget: &'a CallBudget, seed: u64, m: usize) -> Synthesizer<'a> {
    Synthesizer {
        model,
        library: lib,
        taxonomy: tax,
        decoding: DecodingConfig::default().with_seed(seed),
        samples: m,
        parallelism: 4,
        budget,
    }
}

#[test]
fn gold_and_never_gold_rationales() {
    let tax = common::taxonomy();
    let lib = common::library();
    let data = common::dataset(&tax);
    let budget = CallBudget::unlimited();
    for (rules, want) in [("always_gold", 5), ("never_gold", 0)] {
        let model = common::mock(rules, &tax, &data);
        let syn = synth(&model, &lib, &tax, &budget, 7, 5);
        let rs = sample_rationales(&syn, &data[0]).unwrap();
        assert_eq!(rs.len(), 5);
        assert_eq!(rs.iter().filter(|r| r.agreed).count(), want, "{rules}");
        assert!(rs.iter().all(|r| r.samples_drawn == 5));
        assert_eq!(filter_rationales(&rs).is_some(), want > 0);
    }
    assert_eq!(budget.used(), 10);
}

#[test]
fn sampling_contract() {
    let tax = common::taxonomy();
    let lib = common::library();
    let data = common::dataset(&tax);
    let budget = CallBudget::unlimited();
    let model = common::mock("always_gold", &tax, &data);
    let zero = synth(&model, &lib, &tax, &budget, 7, 0);
    assert!(matches!(sample_rationales(&zero, &data[0]), Err(PromptError::Contract(_))));
    let mut cold = synth(&model, &lib, &tax, &budget, 7, 3);
    cold.decoding.temperature = 0.0;
    assert!(matches!(sample_rationales(&cold, &data[0]), Err(PromptError::Contract(_))));
    let tight = CallBudget::new(4);
    let five = synth(&model, &lib, &tax, &tight, 7, 5);
    assert!(sample_rationales(&five, &data[0]).is_err());
    assert!(matches!(build_auto_cot_exemplars(&five, &[]), Err(PromptError::Contract(_))));
}

/// Replays the noisy gold-chain mock: a sample disagrees exactly when the
/// noise draw fires and the random label differs from gold.
fn replay_agreement(tax: &LabelTaxonomy, lib: &ComponentLibrary, ex: &AnnotatedMessage, seed: u64, m: usize) -> Vec<bool> {
    let labels = tax.enumerate_labels();
    let conv = common::conversation_hash(&rationale_prompt(lib, tax, &ex.text).unwrap());
    (0..m as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, i), conv));
            if rng.random::<f64>() < 0.5 {
                labels[rng.random_range(0..labels.len())] == ex.label
            } else {
                true
            }
        })
        .collect()
}

#[test]
fn noisy_rationales_follow_replay() {
    let tax = common::taxonomy();
    let lib = common::library();
    let data = common::dataset(&tax);
    let model = common::mock("noisy_autocot", &tax, &data);
    let budget = CallBudget::unlimited();
    let syn = synth(&model, &lib, &tax, &budget, 7, 20);
    let rs = sample_rationales(&syn, &data[0]).unwrap();
    let want = replay_agreement(&tax, &lib, &data[0], 7, 20);
    assert_eq!(rs.iter().map(|r| r.agreed).collect::<Vec<_>>(), want);
    assert_eq!(want.iter().filter(|a| **a).count(), 7);
}

#[test]
fn auto_cot_on_fifty_exemplars_follows_replay() {
    let p = common::Pipeline::load();
    let model = common::mock("noisy_autocot", &p.taxonomy, &p.messages);
    let budget = CallBudget::unlimited();
    let syn = synth(&model, &p.library, &p.taxonomy, &budget, 7, 5);
    let exemplars = &p.train[..50];
    let out = build_auto_cot_exemplars(&syn, exemplars).unwrap();
    assert!(out.failures.is_empty());
    for (b, ex) in out.blocks.iter().zip(exemplars) {
        let any = replay_agreement(&p.taxonomy, &p.library, ex, 7, 5).into_iter().any(|a| a);
        assert_eq!(b.rationale.is_some(), any, "{}", ex.id);
        assert_eq!(b.message, *ex);
    }
    assert_eq!(out.cot_count(), 49);
    assert_eq!(budget.used(), 250);
}

fn rationale(chain_len: usize, sample: usize, agreed: bool) -> Rationale {
    Rationale {
        chain: "x".repeat(chain_len),
        final_label: FrameLabel::new("a", "b", "c"),
        sample,
        samples_drawn: 8,
        agreed,
    }
}

#[test]
fn filter_matches_exhaustive_scan() {
    let pick = filter_rationales(&[rationale(40, 0, true), rationale(12, 1, true)]).unwrap();
    assert_eq!(pick.chain.len(), 12);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(0..8);
        let mut rs: Vec<Rationale> = (0..n)
            .map(|s| rationale(rng.random_range(1..6), s, rng.random_bool(0.5)))
            .collect();
        let shuffle: Vec<usize> = (0..n).map(|_| rng.random_range(0..1000)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| shuffle[i]);
        rs = order.into_iter().map(|i| rs[i].clone()).collect();

        let mut best: Option<&Rationale> = None;
        for r in rs.iter().filter(|r| r.agreed) {
            let better = match best {
                None => true,
                Some(b) => r.chain.len() < b.chain.len() || (r.chain.len() == b.chain.len() && r.sample < b.sample),
            };
            if better {
                best = Some(r);
            }
        }
        assert_eq!(filter_rationales(&rs).as_ref(), best);
    }
}

proptest! {
    #[test]
    fn order_fidelity(keys in prop::collection::vec(any::<u32>(), 6), n in 0usize..=6) {
        let mut perm: Vec<usize> = (0..6).collect();
        perm.sort_by_key(|&i| (keys[i], i));
        let lib = common::library();
        let tax = common::taxonomy();
        let blocks: Vec<ExemplarBlock> = (0..n)
            .map(|i| ExemplarBlock::plain(msg(&format!("m{i}"), &format!("exemplar text {i}"), ("Customer", "Unavailable", "On Vacation"))))
            .collect();
        let mut c = base(&lib, Strategy::RagK, 6);
        c.exemplar_order = perm.clone();
        let user = compose(&lib, &c, "q", &blocks, &tax).unwrap()[1].content.clone();
        let expected: Vec<usize> = perm.into_iter().filter(|&i| i < n).collect();
        let positions: Vec<usize> = expected.iter().map(|i| user.find(&format!("exemplar text {i}\"")).unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        for (slot, i) in expected.iter().enumerate() {
            let header = format!("Retrieved Example {}:\nText: \"exemplar text {i}\"", slot + 1);
            prop_assert!(user.contains(&header));
        }
    }

    #[test]
    fn input_text_appears_verbatim(text in "[^{}]{0,40}") {
        let lib = common::library();
        let tax = common::taxonomy();
        let msgs = compose(&lib, &base(&lib, Strategy::ZeroShot, 0), &text, &[], &tax).unwrap();
        prop_assert!(msgs[1].content.contains(&text));
    }
}

#[test]
fn mock_rationale_chain_is_stripped_of_final_output() {
    let tax = common::taxonomy();
    let lib = common::library();
    let ex = msg("e", "Khách đi vắng", ("Customer", "Unavailable", "On Vacation"));
    let model = MockModel::new("m", MockRuleSet::from_jsonl(r#"{"fallback": "{{gold_cot}}"}"#).unwrap(), &tax)
        .with_answer_key([(ex.text.clone(), ex.label.clone())]);
    let budget = CallBudget::unlimited();
    let rs = sample_rationales(&synth(&model, &lib, &tax, &budget, 1, 1), &ex).unwrap();
    assert!(!rs[0].chain.contains("Final Output:"));
    assert_eq!(rs[0].final_label, ex.label);
}
