//! Builds an index over the training split and retrieves neighbors for a
//! few queries.
//!
//!     cargo run --example retrieval_knn -- [k]

use std::collections::HashSet;

use promptforge::corpus::{self, DatasetSplit};
use promptforge::retrieval::{EmbedderConfig, VectorIndex};
use promptforge::schema::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let taxonomy = LabelTaxonomy::load(format!("{root}/taxonomy.json"))?;
    let messages = corpus::ingest(format!("{root}/dataset.jsonl"), &taxonomy)?.messages;
    let split = corpus::split(&messages, [0.70, 0.15, 0.15], 2024)?;
    let train = DatasetSplit::select(&messages, &split.train_ids);

    let embedder = EmbedderConfig::default();
    let index = VectorIndex::build_from(&train, &embedder)?;
    println!("{} entries, dim {}, {}", index.len(), index.dim(), index.fingerprint());

    let by_id: std::collections::HashMap<&str, _> = messages.iter().map(|m| (m.id.as_str(), m)).collect();
    for query in DatasetSplit::select(&messages, &split.val_ids).into_iter().take(2) {
        println!("\nquery {:?} ({})", query.text, query.label);
        let neighbors = index.knn(&embedder.embed(&query.text)?, k, &HashSet::new())?;
        for n in neighbors {
            let m = by_id[n.id.as_str()];
            println!("  {:.4} {} {:?} ({})", n.score, n.id, m.text, m.label);
        }
    }
    Ok(())
}
