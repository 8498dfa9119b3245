//! Renders one input under every prompting strategy.
//!
//!     cargo run --example compose_prompts

use std::collections::HashSet;

use promptforge::corpus::{self, DatasetSplit};
use promptforge::gateway::Role;
use promptforge::promptkit::{
    compose, ids, manual_exemplars, ComponentLibrary, ExemplarBlock, PromptCandidate, Rationale, Strategy,
};
use promptforge::retrieval::{EmbedderConfig, VectorIndex};
use promptforge::schema::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let taxonomy = LabelTaxonomy::load(format!("{root}/taxonomy.json"))?;
    let library = ComponentLibrary::bundled()?;
    let instruction = library.get(ids::BASE_INSTRUCTION)?.body.clone();
    let input = "Khách hẹn giao lại vì đang đi công tác.";

    let manual: Vec<ExemplarBlock> = manual_exemplars(&library, &taxonomy)?.into_iter().map(ExemplarBlock::plain).collect();
    let with_chains: Vec<ExemplarBlock> = manual
        .iter()
        .map(|b| ExemplarBlock::with_rationale(b.message.clone(), Rationale::from_label(&b.message.label)))
        .collect();

    let messages = corpus::ingest(format!("{root}/dataset.jsonl"), &taxonomy)?.messages;
    let split = corpus::split(&messages, [0.70, 0.15, 0.15], 2024)?;
    let train = DatasetSplit::select(&messages, &split.train_ids);
    let embedder = EmbedderConfig::default();
    let index = VectorIndex::build_from(&train, &embedder)?;
    let k = 2;
    let retrieved: Vec<ExemplarBlock> = index
        .knn(&embedder.embed(input)?, k, &HashSet::new())?
        .into_iter()
        .map(|n| ExemplarBlock::plain(train.iter().find(|m| m.id == n.id).expect("indexed").to_owned().clone()))
        .collect();

    let cases = [
        (PromptCandidate::new("zero", Strategy::ZeroShot, instruction.clone(), 0), Vec::new()),
        (
            PromptCandidate::new("manual", Strategy::FewShotManual, instruction.clone(), 0).with_exemplars(manual),
            Vec::new(),
        ),
        (
            PromptCandidate::new("cot", Strategy::Cot, instruction.clone(), 0).with_exemplars(with_chains),
            Vec::new(),
        ),
        (PromptCandidate::new("rag", Strategy::RagK, instruction, k), retrieved),
    ];
    for (candidate, retrieved) in &cases {
        println!("==================== {} ====================", candidate.strategy);
        for m in compose(&library, candidate, input, retrieved, &taxonomy)? {
            let role = if m.role == Role::System { "system" } else { "user" };
            println!("--- {role}\n{}", m.content);
        }
        println!();
    }
    Ok(())
}
