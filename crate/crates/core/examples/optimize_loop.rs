//! Runs the optimization loop in-process against mock endpoints, prints
//! the ranking and scores the selected prompt on the test split.
//!
//!     cargo run --release --example optimize_loop -- [rounds]

use promptforge::corpus::{self, DatasetSplit};
use promptforge::gateway::{load_mock_rules, CallBudget, DecodingConfig, MockModel};
use promptforge::optimizer::{evaluate_candidate, ranking, run_loop, select_final, EvalContext, OptimizerConfig, OptimizerModel};
use promptforge::promptkit::ComponentLibrary;
use promptforge::retrieval::{EmbedderConfig, VectorIndex};
use promptforge::schema::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rounds: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let taxonomy = LabelTaxonomy::load(format!("{root}/taxonomy.json"))?;
    let library = ComponentLibrary::bundled()?;
    let messages = corpus::ingest(format!("{root}/dataset.jsonl"), &taxonomy)?.messages;
    let split = corpus::split(&messages, [0.70, 0.15, 0.15], 2024)?;
    let train = DatasetSplit::select(&messages, &split.train_ids);
    let owned = |ids: &[String]| -> Vec<_> { DatasetSplit::select(&messages, ids).into_iter().cloned().collect() };
    let (val, test) = (owned(&split.val_ids), owned(&split.test_ids));

    let embedder = EmbedderConfig::default();
    let index = VectorIndex::build_from(&train, &embedder)?;
    let key = || messages.iter().map(|m| (m.text.clone(), m.label.clone()));
    let target = MockModel::new("coupled", load_mock_rules(format!("{root}/mocks/relevance_coupled.jsonl"))?, &taxonomy)
        .with_answer_key(key());
    let optimizer = MockModel::new("optimizer", load_mock_rules(format!("{root}/mocks/optimizer.jsonl"))?, &taxonomy);

    let config = OptimizerConfig { rounds, ..OptimizerConfig::default() };
    let budget = CallBudget::new(config.budget);
    let decoding = DecodingConfig::default();
    let ctx = EvalContext::new(&library, &taxonomy, &index, &embedder, &train, &target, decoding.clone(), &budget)
        .with_eval_seed(config.eval_seed)
        .with_parallelism(config.parallelism);
    let opt = OptimizerModel {
        model: &optimizer,
        library: &library,
        taxonomy: &taxonomy,
        decoding,
        budget: &budget,
    };
    let outcome = run_loop(&config, &ctx, &opt, &val)?;

    println!("{:<8} {:>5} {:<8} {:>3} {:<8} {:>8} {:>7}", "id", "round", "origin", "k", "cot", "exact", "tokens");
    for p in ranking(&outcome.pairs) {
        let c = &p.candidate;
        println!(
            "{:<8} {:>5} {:<8} {:>3} {:<8} {:>8.4} {:>7}",
            c.id,
            p.round,
            c.provenance.transformation,
            c.k,
            format!("{:?}", c.cot_mode),
            p.report.exact_match,
            p.probe_tokens
        );
    }
    println!("best so far by round: {:?}", outcome.best_so_far());

    let best = select_final(&outcome.pairs).ok_or("no pairs")?;
    let ctx = ctx.with_eval_seed(config.eval_seed ^ 1);
    let report = evaluate_candidate(&ctx, &best.candidate, &test)?;
    println!(
        "\nselected {} (k={}): validation {:.4}, test {:.4} over {} messages; {} calls used",
        best.candidate.id,
        best.candidate.k,
        best.report.exact_match,
        report.exact_match,
        report.n,
        budget.used()
    );
    Ok(())
}
