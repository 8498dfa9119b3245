use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::artifacts::{
    ranking_csv, ranking_table, read_json, report_csv, report_table, strategy_label, write_file, write_json, FinalPrompt,
    PredictionMeta, PredictionRecord, ReportRow,
};
use super::{Cli, CliError, RunConfig};
use crate::corpus::{self, AnnotatedMessage, DatasetSplit};
use crate::gateway::{run_parallel, CallBudget, ChatModel, Role};
use crate::hashing::sha256_hex;
use crate::optimizer::{
    ranking, run_loop, select_final, EvalContext, OptimizerError, OptimizerModel, PROBE_INPUT,
};
use crate::promptkit::{
    build_auto_cot_exemplars, compose, ids, manual_exemplars, ComponentLibrary, ExemplarBlock, PromptCandidate, Strategy,
    Synthesizer,
};
use crate::retrieval::VectorIndex;
use crate::schema::{LabelTaxonomy, Level};

pub(super) struct Invocation<'a> {
    pub cli: &'a Cli,
    pub config: RunConfig,
}

impl Invocation<'_> {
    fn taxonomy(&self) -> Result<LabelTaxonomy, CliError> {
        Ok(LabelTaxonomy::load(&self.config.paths.taxonomy)?)
    }

    fn library(&self) -> Result<ComponentLibrary, CliError> {
        Ok(match &self.config.paths.library {
            Some(p) => ComponentLibrary::load(p)?,
            None => ComponentLibrary::bundled()?,
        })
    }

    fn dataset(&self, taxonomy: &LabelTaxonomy) -> Result<corpus::Ingested, CliError> {
        Ok(corpus::ingest(&self.config.paths.dataset, taxonomy)?)
    }

    fn split(&self) -> Result<DatasetSplit, CliError> {
        let path = self.config.split_path();
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "no split at {}; run `promptforge ingest` first",
                path.display()
            )));
        }
        read_json(&path)
    }

    /// The index and the hash of its file.
    fn index(&self) -> Result<(VectorIndex, String), CliError> {
        let path = self.config.index_path();
        let bytes = std::fs::read(&path).map_err(|e| {
            CliError::Usage(format!("cannot read index {}: {e}; run `promptforge index` first", path.display()))
        })?;
        let index = VectorIndex::from_bytes(&bytes)?;
        let expected = self.config.embedder.fingerprint();
        if index.fingerprint() != expected {
            return Err(CliError::Data(format!(
                "fingerprint mismatch: index was built with `{}`, configuration uses `{expected}`",
                index.fingerprint()
            )));
        }
        Ok((index, sha256_hex(&bytes)))
    }

    fn target_name(&self) -> String {
        self.cli
            .endpoint
            .clone()
            .unwrap_or_else(|| self.config.optimizer.target_endpoint.clone())
    }

    fn connect(&self, name: &str, taxonomy: &LabelTaxonomy) -> Result<Arc<dyn ChatModel>, CliError> {
        let spec = self
            .config
            .endpoints
            .get(name)
            .ok_or_else(|| CliError::Usage(format!("no endpoint named `{name}` in the configuration")))?;
        Ok(spec.connect(name, taxonomy)?)
    }

    fn eval_seed(&self) -> u64 {
        self.cli.seed.unwrap_or(self.config.optimizer.eval_seed)
    }

    /// Config with paths relative to the config file and the output root
    /// shown as `.`, so snapshots do not depend on where a run was written.
    fn snapshot(&self) -> String {
        let base = self.cli.config.parent().unwrap_or(Path::new(""));
        let rel = |p: &mut PathBuf| {
            if let Ok(r) = p.strip_prefix(base) {
                *p = r.to_path_buf();
            }
        };
        let mut c = self.config.clone();
        rel(&mut c.paths.taxonomy);
        rel(&mut c.paths.dataset);
        if let Some(p) = &mut c.paths.library {
            rel(p);
        }
        if let Some(p) = &mut c.paths.index {
            rel(p);
        }
        c.paths.out = PathBuf::from(".");
        for spec in c.endpoints.values_mut() {
            if let crate::gateway::EndpointSpec::Mock { rules, answer_key } = spec {
                rel(rules);
                if let Some(k) = answer_key {
                    rel(k);
                }
            }
        }
        c.to_toml()
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Usage(format!("cannot write output: {e}"))
}

fn split_messages<'a>(messages: &'a [AnnotatedMessage], ids: &[String], name: &str) -> Result<Vec<&'a AnnotatedMessage>, CliError> {
    let selected = DatasetSplit::select(messages, ids);
    if selected.len() != ids.len() {
        return Err(CliError::Data(format!(
            "{name} split lists {} ids but only {} are in the dataset",
            ids.len(),
            selected.len()
        )));
    }
    Ok(selected)
}

pub(super) fn ingest(inv: &Invocation<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let taxonomy = inv.taxonomy()?;
    let ingested = inv.dataset(&taxonomy)?;
    let seed = inv.cli.seed.unwrap_or(inv.config.split.seed);
    let split = corpus::split(&ingested.messages, inv.config.split.ratios, seed)?;
    let stats = corpus::stats(&ingested.messages)?;
    write_file(&inv.config.split_path(), split.to_json())?;
    write_file(&inv.config.paths.out.join("rejections.jsonl"), ingested.report.to_jsonl())?;
    writeln!(
        out,
        "accepted {} message(s), rejected {} line(s)\n",
        ingested.report.accepted,
        ingested.report.rejections.len()
    )
    .map_err(out_err)?;
    write!(out, "{stats}").map_err(out_err)?;
    writeln!(
        out,
        "\n\nsplit (seed {seed}): train {} / validation {} / test {}",
        split.train_ids.len(),
        split.val_ids.len(),
        split.test_ids.len()
    )
    .map_err(out_err)?;
    Ok(())
}

pub(super) fn stats(inv: &Invocation<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let taxonomy = inv.taxonomy()?;
    let ingested = inv.dataset(&taxonomy)?;
    writeln!(out, "{}", corpus::stats(&ingested.messages)?).map_err(out_err)?;
    if inv.config.split_path().exists() {
        let split = inv.split()?;
        writeln!(
            out,
            "\n{:<32} {:>10}\n{:<32} {:>10}\n{:<32} {:>10}",
            "Training set",
            split.train_ids.len(),
            "Validation set",
            split.val_ids.len(),
            "Test set",
            split.test_ids.len()
        )
        .map_err(out_err)?;
    }
    Ok(())
}

pub(super) fn index(inv: &Invocation<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let taxonomy = inv.taxonomy()?;
    let ingested = inv.dataset(&taxonomy)?;
    let split = inv.split()?;
    let train = split_messages(&ingested.messages, &split.train_ids, "training")?;
    let index = VectorIndex::build_from(&train, &inv.config.embedder)?;
    let path = inv.config.index_path();
    write_file(&path, index.to_bytes())?;
    writeln!(
        out,
        "indexed {} training message(s) with {} into {}",
        index.len(),
        index.fingerprint(),
        path.display()
    )
    .map_err(out_err)?;
    Ok(())
}

/// Fails if any validation or test id is indexed.
fn guard_split(index: &VectorIndex, split: &DatasetSplit) -> Result<(), CliError> {
    match split.val_ids.iter().chain(&split.test_ids).find(|id| index.contains(id)) {
        Some(id) => Err(CliError::Data(format!(
            "leakage guard: held-out message `{id}` is in the index; rebuild it with `promptforge index`"
        ))),
        None => Ok(()),
    }
}

fn render_messages(messages: &[crate::gateway::ChatMessage]) -> String {
    let mut s = String::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        s.push_str(&format!("[{role}]\n{}\n", m.content));
    }
    s
}

fn probe_rendering(library: &ComponentLibrary, taxonomy: &LabelTaxonomy, c: &PromptCandidate) -> Result<String, CliError> {
    let retrieved: Vec<ExemplarBlock> = if c.strategy == Strategy::RagK {
        let manual = manual_exemplars(library, taxonomy)?;
        (0..c.k).map(|i| ExemplarBlock::plain(manual[i % manual.len()].clone())).collect()
    } else {
        Vec::new()
    };
    let messages = compose(library, c, PROBE_INPUT, &retrieved, taxonomy)?;
    Ok(render_messages(&messages))
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub(super) fn optimize(inv: &Invocation<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let started = unix_now();
    let taxonomy = inv.taxonomy()?;
    let library = inv.library()?;
    let ingested = inv.dataset(&taxonomy)?;
    let split = inv.split()?;
    let (index, index_hash) = inv.index()?;
    guard_split(&index, &split)?;
    let train = split_messages(&ingested.messages, &split.train_ids, "training")?;
    let val: Vec<AnnotatedMessage> = split_messages(&ingested.messages, &split.val_ids, "validation")?
        .into_iter()
        .cloned()
        .collect();

    let mut config = inv.config.optimizer.clone();
    if let Some(seed) = inv.cli.seed {
        config.eval_seed = seed;
        config.mutation_seed = seed;
    }
    if let Some(name) = &inv.cli.endpoint {
        config.target_endpoint = name.clone();
    }
    config.validate()?;
    let target = inv.connect(&config.target_endpoint, &taxonomy)?;
    let optimizer_model = inv.connect(&config.optimizer_endpoint, &taxonomy)?;
    let budget = CallBudget::new(config.budget);
    let ctx = EvalContext::new(
        &library,
        &taxonomy,
        &index,
        &inv.config.embedder,
        &train,
        target.as_ref(),
        inv.config.decoding.clone(),
        &budget,
    )
    .with_eval_seed(config.eval_seed)
    .with_parallelism(config.parallelism);
    let opt = OptimizerModel {
        model: optimizer_model.as_ref(),
        library: &library,
        taxonomy: &taxonomy,
        decoding: inv.config.decoding.with_seed(config.mutation_seed),
        budget: &budget,
    };
    let outcome = run_loop(&config, &ctx, &opt, &val)?;

    // Build the artifact in a scratch directory, then swap it in.
    let run_dir = inv.config.run_dir();
    let scratch = inv.config.paths.out.join(".run.partial");
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch).map_err(|e| CliError::Usage(format!("cannot clear {}: {e}", scratch.display())))?;
    }
    write_file(&scratch.join("config.toml"), inv.snapshot())?;
    let manifest = serde_json::json!({
        "components": library.hashes(),
        "taxonomy_hash": taxonomy.content_hash(),
        "dataset_sha256": sha256_hex(&std::fs::read(&inv.config.paths.dataset).map_err(|e| CliError::Usage(e.to_string()))?),
        "split_sha256": sha256_hex(split.to_json().as_bytes()),
        "index_sha256": index_hash,
        "embedder_fingerprint": index.fingerprint(),
        "target_endpoint": config.target_endpoint,
        "optimizer_endpoint": config.optimizer_endpoint,
    });
    write_json(&scratch.join("manifest.json"), &manifest)?;
    for p in &outcome.pairs {
        let c = &p.candidate;
        write_file(&scratch.join("candidates").join(format!("{}.txt", c.id)), probe_rendering(&library, &taxonomy, c)?)?;
        write_json(&scratch.join("candidates").join(format!("{}.json", c.id)), c)?;
        write_json(&scratch.join("reports").join(format!("{}.json", c.id)), &p.report)?;
    }
    let ranked = ranking(&outcome.pairs);
    let table = ranking_table(&ranked);
    write_file(&scratch.join("ranking.txt"), &table)?;
    write_file(&scratch.join("ranking.csv"), ranking_csv(&ranked))?;
    write_json(&scratch.join("pairs.json"), &outcome.pairs)?;
    write_json(
        &scratch.join("outcome.json"),
        &serde_json::json!({
            "pairs": outcome.pairs.len(),
            "truncated": outcome.truncated,
            "best_so_far": outcome.best_so_far(),
            "calls_used": budget.used(),
            "budget": config.budget,
            "selected": select_final(&outcome.pairs).map(|p| p.candidate.id.clone()),
        }),
    )?;
    if let Some(best) = select_final(&outcome.pairs) {
        let fp = FinalPrompt {
            candidate: best.candidate.clone(),
            instruction: best.candidate.instruction.clone(),
            strategy: best.candidate.strategy,
            k: best.candidate.k,
            component_hashes: library.hashes().clone(),
            taxonomy_hash: taxonomy.content_hash(),
            embedder_fingerprint: index.fingerprint().to_string(),
            index_hash: manifest["index_sha256"].as_str().unwrap_or_default().to_string(),
            eval_seed: config.eval_seed,
            decoding: inv.config.decoding.clone(),
            validation_exact_match: best.report.exact_match,
        };
        write_json(&scratch.join("final_prompt.json"), &fp)?;
    }
    write_json(
        &scratch.join("metadata.json"),
        &serde_json::json!({"started_unix": started, "finished_unix": unix_now()}),
    )?;
    if run_dir.exists() {
        std::fs::remove_dir_all(&run_dir).map_err(|e| CliError::Usage(format!("cannot replace {}: {e}", run_dir.display())))?;
    }
    std::fs::rename(&scratch, &run_dir).map_err(|e| CliError::Usage(format!("cannot move run artifact into place: {e}")))?;

    write!(out, "{table}").map_err(out_err)?;
    match select_final(&outcome.pairs) {
        Some(best) => writeln!(
            out,
            "\nselected {} ({}, k={}) with exact match {:.4}; artifact in {}",
            best.candidate.id,
            best.candidate.strategy,
            best.candidate.k,
            best.report.exact_match,
            run_dir.display()
        )
        .map_err(out_err)?,
        None => writeln!(out, "\nno candidate was scored").map_err(out_err)?,
    }
    if let Some(why) = &outcome.truncated {
        eprintln!("warning: optimization truncated: {why}");
    }
    Ok(())
}

/// Messages to label: `--input` (a dataset-style JSONL file, or `-` for
/// one message per stdin line) or else the test split.
fn infer_inputs(inv: &Invocation<'_>, dataset: &[AnnotatedMessage]) -> Result<Vec<(String, String)>, CliError> {
    let from_lines = |lines: Vec<String>| -> Result<Vec<(String, String)>, CliError> {
        let mut out = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<serde_json::Value>(line) {
                Ok(v) if v.get("text").is_some_and(|t| t.is_string()) => {
                    let text = v["text"].as_str().unwrap_or_default().to_string();
                    let id = v
                        .get("id")
                        .and_then(|i| i.as_str())
                        .map(str::to_string)
                        .unwrap_or_else(|| format!("input-{}", i + 1));
                    out.push((id, text));
                }
                _ => out.push((format!("input-{}", i + 1), line.trim().to_string())),
            }
        }
        Ok(out)
    };
    match inv.cli.input.as_deref() {
        Some("-") => {
            let lines = std::io::stdin()
                .lock()
                .lines()
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Usage(format!("cannot read standard input: {e}")))?;
            from_lines(lines)
        }
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {path}: {e}")))?;
            from_lines(text.lines().map(str::to_string).collect())
        }
        None => {
            let split = inv.split()?;
            Ok(split_messages(dataset, &split.test_ids, "test")?
                .into_iter()
                .map(|m| (m.id.clone(), m.text.clone()))
                .collect())
        }
    }
}

fn check_final_prompt(
    fp: &FinalPrompt,
    library: &ComponentLibrary,
    taxonomy: &LabelTaxonomy,
    index: &VectorIndex,
    index_hash: &str,
) -> Result<(), CliError> {
    let mismatch = |what: &str| Err(CliError::Data(format!("fingerprint mismatch: {what} differs from the optimized run")));
    if &fp.component_hashes != library.hashes() {
        return mismatch("component library");
    }
    if fp.taxonomy_hash != taxonomy.content_hash() {
        return mismatch("taxonomy");
    }
    if fp.embedder_fingerprint != index.fingerprint() {
        return mismatch("embedder");
    }
    if fp.index_hash != index_hash {
        return mismatch("index file");
    }
    Ok(())
}

pub(super) fn infer(inv: &Invocation<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let taxonomy = inv.taxonomy()?;
    let library = inv.library()?;
    let ingested = inv.dataset(&taxonomy)?;
    let split = inv.split()?;
    let (index, index_hash) = inv.index()?;
    guard_split(&index, &split)?;
    let train = split_messages(&ingested.messages, &split.train_ids, "training")?;
    let endpoint = inv.target_name();
    let target = inv.connect(&endpoint, &taxonomy)?;
    let budget = CallBudget::unlimited();

    let (candidate, optimized, eval_seed) = match inv.cli.strategy.as_deref() {
        None => {
            let path = inv.config.run_dir().join("final_prompt.json");
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "no optimized prompt at {}; run `promptforge optimize` or pass --strategy",
                    path.display()
                )));
            }
            let fp: FinalPrompt = read_json(&path)?;
            check_final_prompt(&fp, &library, &taxonomy, &index, &index_hash)?;
            (fp.candidate, true, inv.cli.seed.unwrap_or(fp.eval_seed))
        }
        Some(name) => {
            let strategy = Strategy::parse(name).ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
                CliError::Usage(format!("unknown strategy `{name}`; expected one of {}", names.join(", ")))
            })?;
            let k = if strategy == Strategy::RagK { inv.cli.k.unwrap_or(3) } else { 0 };
            let instruction = library.get(ids::BASE_INSTRUCTION)?.body.clone();
            let mut c = PromptCandidate::new(strategy_label(strategy, k), strategy, instruction, k);
            match strategy {
                Strategy::FewShotManual => {
                    c.static_exemplars = manual_exemplars(&library, &taxonomy)?.into_iter().map(ExemplarBlock::plain).collect();
                }
                Strategy::AutoCot => {
                    let syn = Synthesizer {
                        model: target.as_ref(),
                        library: &library,
                        taxonomy: &taxonomy,
                        decoding: inv.config.decoding.clone(),
                        samples: inv.config.synthesis.samples,
                        parallelism: inv.config.optimizer.parallelism,
                        budget: &budget,
                    };
                    let outcome = build_auto_cot_exemplars(&syn, &manual_exemplars(&library, &taxonomy)?)?;
                    for (id, why) in &outcome.failures {
                        eprintln!("warning: exemplar {id} kept in plain form: {why}");
                    }
                    c.static_exemplars = outcome.blocks;
                }
                _ => {}
            }
            (c, false, inv.eval_seed())
        }
    };

    let ctx = EvalContext::new(
        &library,
        &taxonomy,
        &index,
        &inv.config.embedder,
        &train,
        target.as_ref(),
        inv.config.decoding.clone(),
        &budget,
    )
    .with_eval_seed(eval_seed);
    let inputs = infer_inputs(inv, &ingested.messages)?;
    let mut seen = HashSet::new();
    if let Some((dup, _)) = inputs.iter().find(|(id, _)| !seen.insert(id.as_str())) {
        return Err(CliError::Data(format!("duplicate input id `{dup}`")));
    }
    let results = run_parallel(inv.config.optimizer.parallelism, &inputs, |_, (id, text)| {
        ctx.predict(&candidate, id, text, &budget)
    });
    let mut records = Vec::with_capacity(inputs.len());
    for ((id, _), r) in inputs.iter().zip(results) {
        records.push(match r {
            Ok(p) => PredictionRecord {
                id: id.clone(),
                predicted: p.attempt.label.as_ref().ok().cloned(),
                error: p.attempt.label.as_ref().err().map(|e| e.as_str().to_string()),
                exemplar_ids: p.exemplar_ids,
                raw: p.attempt.raw,
            },
            Err(e @ (OptimizerError::Gateway(_) | OptimizerError::Retrieval(_))) => PredictionRecord {
                id: id.clone(),
                predicted: None,
                error: Some("endpoint".into()),
                exemplar_ids: Vec::new(),
                raw: format!("<{e}>"),
            },
            Err(e) => return Err(e.into()),
        });
    }

    let label = if optimized {
        format!("final[{}]", strategy_label(candidate.strategy, candidate.k))
    } else {
        strategy_label(candidate.strategy, candidate.k)
    };
    let stem = format!("{endpoint}__{}", label.replace(['[', ']', '='], "_"));
    let dir = inv.config.predictions_dir();
    let mut jsonl = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r).expect("record serializes"));
        jsonl.push('\n');
    }
    let path = dir.join(format!("{stem}.jsonl"));
    write_file(&path, jsonl)?;
    let meta = PredictionMeta {
        endpoint: endpoint.clone(),
        label: label.clone(),
        strategy: candidate.strategy,
        k: candidate.k,
        candidate_id: candidate.id.clone(),
        optimized,
        taxonomy_hash: taxonomy.content_hash(),
        embedder_fingerprint: index.fingerprint().to_string(),
        n: records.len(),
    };
    write_json(&dir.join(format!("{stem}.meta.json")), &meta)?;

    let gold: HashMap<&str, &AnnotatedMessage> = ingested.messages.iter().map(|m| (m.id.as_str(), m)).collect();
    let known: Vec<&PredictionRecord> = records.iter().filter(|r| gold.contains_key(r.id.as_str())).collect();
    write!(out, "wrote {} prediction(s) with {label} via {endpoint} to {}", records.len(), path.display()).map_err(out_err)?;
    if !known.is_empty() {
        let exact = known
            .iter()
            .filter(|r| r.predicted.as_ref() == Some(&gold[r.id.as_str()].label))
            .count();
        write!(out, "; exact match {:.4} over {} labeled", exact as f64 / known.len() as f64, known.len()).map_err(out_err)?;
    }
    writeln!(out).map_err(out_err)?;
    Ok(())
}

fn prediction_files(inv: &Invocation<'_>) -> Result<Vec<PathBuf>, CliError> {
    let target = inv
        .cli
        .input
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| inv.config.predictions_dir());
    if target.is_file() {
        return Ok(vec![target]);
    }
    let entries = std::fs::read_dir(&target)
        .map_err(|e| CliError::Usage(format!("cannot read predictions in {}: {e}", target.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no prediction files in {}", target.display())));
    }
    Ok(files)
}

/// Aggregates prediction records against gold labels.
pub fn aggregate(endpoint: &str, strategy: &str, records: &[PredictionRecord], gold: &HashMap<&str, &AnnotatedMessage>) -> ReportRow {
    let scored: Vec<(&PredictionRecord, &AnnotatedMessage)> = records
        .iter()
        .filter_map(|r| gold.get(r.id.as_str()).map(|g| (r, *g)))
        .collect();
    let n = scored.len();
    let frac = |f: &dyn Fn(&PredictionRecord, &AnnotatedMessage) -> bool| {
        if n == 0 {
            0.0
        } else {
            scored.iter().filter(|(r, g)| f(r, g)).count() as f64 / n as f64
        }
    };
    let level = |l: Level| move |r: &PredictionRecord, g: &AnnotatedMessage| r.predicted.as_ref().is_some_and(|p| p.get(l) == g.label.get(l));
    ReportRow {
        endpoint: endpoint.to_string(),
        strategy: strategy.to_string(),
        exact_match: frac(&|r, g| r.predicted.as_ref() == Some(&g.label)),
        actor_acc: frac(&level(Level::Actor)),
        reason_acc: frac(&level(Level::Reason)),
        cause_acc: frac(&level(Level::Cause)),
        validity_rate: frac(&|r, _| r.predicted.is_some()),
        n,
    }
}

pub(super) fn report(inv: &Invocation<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let taxonomy = inv.taxonomy()?;
    let ingested = inv.dataset(&taxonomy)?;
    let gold: HashMap<&str, &AnnotatedMessage> = ingested.messages.iter().map(|m| (m.id.as_str(), m)).collect();
    let expected_hash = taxonomy.content_hash();
    let final_path = inv.config.run_dir().join("final_prompt.json");
    if final_path.exists() {
        let fp: FinalPrompt = read_json(&final_path)?;
        if fp.taxonomy_hash != expected_hash {
            return Err(CliError::Data(format!(
                "inconsistent taxonomy: run artifact {} was produced with a different taxonomy",
                final_path.display()
            )));
        }
    }

    type Key = (String, u8, Strategy, usize, String);
    let mut groups: BTreeMap<Key, Vec<PredictionRecord>> = BTreeMap::new();
    for file in prediction_files(inv)? {
        let meta_path = file.with_extension("meta.json");
        let meta: PredictionMeta = read_json(&meta_path)?;
        if meta.taxonomy_hash != expected_hash {
            return Err(CliError::Data(format!(
                "inconsistent taxonomy: {} was produced with a different taxonomy",
                file.display()
            )));
        }
        let text = std::fs::read_to_string(&file).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", file.display())))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            records.push(
                serde_json::from_str::<PredictionRecord>(line)
                    .map_err(|e| CliError::Data(format!("{} line {}: {e}", file.display(), i + 1)))?,
            );
        }
        let key = (meta.endpoint.clone(), u8::from(meta.optimized), meta.strategy, meta.k, meta.label.clone());
        groups.entry(key).or_default().extend(records);
    }
    let rows: Vec<ReportRow> = groups
        .iter()
        .map(|((endpoint, _, _, _, label), records)| aggregate(endpoint, label, records, &gold))
        .collect();
    let csv_path = inv.config.paths.out.join("report.csv");
    write_file(&csv_path, report_csv(&rows))?;
    write!(out, "{}", report_table(&rows)).map_err(out_err)?;
    writeln!(out, "\nCSV written to {}", csv_path.display()).map_err(out_err)?;
    Ok(())
}
