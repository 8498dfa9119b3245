//! Ingests the bundled dataset, prints its statistics and a seeded split.
//!
//!     cargo run --example corpus_split -- [seed]

use promptforge::corpus::{self, DatasetSplit};
use promptforge::schema::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2024);
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let taxonomy = LabelTaxonomy::load(format!("{root}/taxonomy.json"))?;
    let ingested = corpus::ingest(format!("{root}/dataset.jsonl"), &taxonomy)?;
    println!(
        "accepted {}, rejected {}",
        ingested.report.accepted,
        ingested.report.rejections.len()
    );
    println!("{}", corpus::stats(&ingested.messages)?);

    let split = corpus::split(&ingested.messages, [0.70, 0.15, 0.15], seed)?;
    println!(
        "seed {seed}: train {}, validation {}, test {}",
        split.train_ids.len(),
        split.val_ids.len(),
        split.test_ids.len()
    );
    let test = DatasetSplit::select(&ingested.messages, &split.test_ids);
    for m in test.iter().take(3) {
        println!("  {} {:?} -> {}", m.id, m.text, m.label);
    }
    Ok(())
}
