//! Regenerates the bundled synthetic dataset from the bundled taxonomy.
//!
//!     cargo run --example make_fixture -- [n] [seed]

use std::path::Path;

use promptforge::corpus;
use promptforge::schema::LabelTaxonomy;
use promptforge::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1500);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2024);

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let taxonomy = LabelTaxonomy::load(root.join("taxonomy.json"))?;
    let messages = synth::generate(&taxonomy, n, seed);
    let out = root.join("dataset.jsonl");
    promptforge::artifact::write_atomic(&out, corpus::to_jsonl(&messages).as_bytes())?;

    println!("wrote {} messages to {}", messages.len(), out.display());
    println!("{}", corpus::stats(&messages)?);
    Ok(())
}
