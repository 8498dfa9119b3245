//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use common::Pipeline;
use promptforge::corpus::{self, AnnotatedMessage};
use promptforge::gateway::{parse_frame_response, CallBudget, DecodingConfig, EndpointSpec, MockModel};
use promptforge::hashing::{derive_seed, derive_seed_str};
use promptforge::optimizer::{
    evaluate_candidate, ranking, run_loop, select_final, EvalContext, LoopOutcome, OptimizerConfig, OptimizerModel,
    SolutionPair,
};
use promptforge::promptkit::{build_auto_cot_exemplars, compose, rationale_prompt, ExemplarBlock, Synthesizer};
use promptforge::retrieval::{EmbedderConfig, VectorIndex};
use promptforge::schema::{FrameLabel, LabelForm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Runs a criterion, turning panics into failures, and prints its line
/// straight to stderr so it shows even when output is captured.
fn criterion(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d.clone()),
        Err(e) => ("FAIL", e.clone()),
    };
    let line = format!("[{tag}] criterion {n}: {name} ({detail})\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    result.is_ok()
}

/// Top-k by exhaustive scan over the oracle embedding: score descending,
/// id ascending.
fn oracle_knn(pool: &[(String, Vec<f64>)], query: &[f64], k: usize, exclude: &str) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = pool
        .iter()
        .filter(|(id, _)| id != exclude)
        .map(|(id, v)| (id.clone(), v.iter().zip(query).map(|(a, b)| a * b).sum()))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn c1_knn() -> Outcome {
    let tax = common::taxonomy();
    let data = common::dataset(&tax);
    let pool = &data[..200];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let queries: Vec<&AnnotatedMessage> = rand::seq::index::sample(&mut rng, data.len() - 200, 100)
        .into_iter()
        .map(|i| &data[200 + i])
        .collect();
    let embedder = EmbedderConfig::default();
    let started = Instant::now();
    let index = VectorIndex::build(pool, &embedder).map_err(|e| e.to_string())?;
    let oracle_pool: Vec<(String, Vec<f64>)> = pool.iter().map(|m| (m.id.clone(), common::oracle_embed(&m.text, 256))).collect();
    let mut checked = 0;
    for k in [1, 3, 6] {
        for q in &queries {
            let got = index
                .knn(&embedder.embed(&q.text).unwrap(), k, &HashSet::new())
                .map_err(|e| e.to_string())?;
            let want = oracle_knn(&oracle_pool, &common::oracle_embed(&q.text, 256), k, "");
            check(got.len() == want.len(), format!("{}: length {} vs {}", q.id, got.len(), want.len()))?;
            for (g, w) in got.iter().zip(&want) {
                check(g.id == w.0 && (g.score - w.1).abs() <= 1e-9, format!("{} k={k}: {:?} vs {:?}", q.id, g, w))?;
            }
            checked += 1;
        }
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("{checked} queries exact, {:.2}s", elapsed.as_secs_f64()))
}

fn c2_round_trip() -> Outcome {
    let tax = common::taxonomy();
    let labels = tax.enumerate_labels();
    check(labels.len() == 73, format!("{} labels", labels.len()))?;
    for l in labels.iter() {
        for form in [LabelForm::Flat, LabelForm::Object, LabelForm::Tuple] {
            let text = tax.render(l, form).map_err(|e| e.to_string())?;
            let back = match form {
                LabelForm::Flat => tax.parse_label_string(&text).map_err(|e| format!("{text}: {e}"))?,
                _ => parse_frame_response(&text, &tax).map_err(|e| format!("{text}: {e}"))?,
            };
            check(&back == l, format!("{text} parsed as {back:?}"))?;
        }
    }
    Ok("73 labels x 3 forms".into())
}

fn c3_split() -> Outcome {
    let tax = common::taxonomy();
    let data = common::dataset(&tax);
    let a = corpus::split(&data, common::RATIOS, common::SPLIT_SEED).map_err(|e| e.to_string())?;
    let b = corpus::split(&data, common::RATIOS, common::SPLIT_SEED).map_err(|e| e.to_string())?;
    let sizes = (a.train_ids.len(), a.val_ids.len(), a.test_ids.len());
    check(sizes == (1050, 225, 225), format!("sizes {sizes:?}"))?;
    let all: HashSet<&String> = a.train_ids.iter().chain(&a.val_ids).chain(&a.test_ids).collect();
    check(all.len() == 1500, "splits overlap")?;
    check(data.iter().all(|m| all.contains(&m.id)), "a message is missing from the split")?;
    check(a.to_json() == b.to_json(), "split differs between runs")?;
    Ok("1050/225/225, disjoint, byte-identical".into())
}

fn c4_stats() -> Outcome {
    let raw = std::fs::read_to_string(common::fixture("dataset.jsonl")).unwrap();
    let lens: Vec<usize> = raw
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["text"].as_str().unwrap().split_whitespace().count())
        .collect();
    let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
    let s = corpus::stats(&common::dataset(&common::taxonomy())).map_err(|e| e.to_string())?;
    check(s.count == lens.len(), format!("count {} vs {}", s.count, lens.len()))?;
    check((s.mean_len - mean).abs() <= 1e-9, format!("mean {} vs {mean}", s.mean_len))?;
    check(s.max_len == *lens.iter().max().unwrap(), "max differs")?;
    check(s.min_len == *lens.iter().min().unwrap(), "min differs")?;
    check(s.over_10 == lens.iter().filter(|&&l| l > 10).count(), "over-10 count differs")?;
    Ok(format!("n={} mean={:.4} max={} min={} >10={}", s.count, s.mean_len, s.max_len, s.min_len, s.over_10))
}

fn eval_ctx<'a>(p: &'a Pipeline, target: &'a MockModel, budget: &'a CallBudget) -> EvalContext<'a> {
    EvalContext::new(
        &p.library,
        &p.taxonomy,
        &p.index,
        &p.embedder,
        &p.train_refs(),
        target,
        DecodingConfig::default().with_seed(42),
        budget,
    )
    .with_eval_seed(42)
    .with_parallelism(4)
}

fn full_loop(p: &Pipeline) -> (LoopOutcome, Duration) {
    let target = common::mock("relevance_coupled", &p.taxonomy, &p.messages);
    let optimizer = common::mock("optimizer", &p.taxonomy, &[]);
    let config = OptimizerConfig::default();
    let budget = CallBudget::new(config.budget);
    let opt = OptimizerModel {
        model: &optimizer,
        library: &p.library,
        taxonomy: &p.taxonomy,
        decoding: DecodingConfig::default().with_seed(config.mutation_seed),
        budget: &budget,
    };
    let started = Instant::now();
    let ctx = eval_ctx(p, &target, &budget).with_prompts(true);
    let out = run_loop(&config, &ctx, &opt, &p.val).expect("loop runs");
    (out, started.elapsed())
}

/// Exact-match count of a rag_k candidate under the coupled mock, replayed
/// from its documented behaviour: gold when a shown exemplar shares the
/// gold actor, otherwise one seeded uniform draw over the label space.
fn coupled_replay(p: &Pipeline, pair: &SolutionPair) -> Result<usize, String> {
    let labels = p.taxonomy.enumerate_labels();
    let by_id: HashMap<&str, &AnnotatedMessage> = p.train.iter().map(|m| (m.id.as_str(), m)).collect();
    let pool: Vec<(String, Vec<f64>)> = p.train.iter().map(|m| (m.id.clone(), common::oracle_embed(&m.text, 256))).collect();
    let mut hits = 0;
    for (m, item) in p.val.iter().zip(&pair.report.items) {
        let ids: Vec<String> = if pair.candidate.k == 0 {
            Vec::new()
        } else {
            oracle_knn(&pool, &common::oracle_embed(&m.text, 256), pair.candidate.k, &m.id)
                .into_iter()
                .map(|n| n.0)
                .collect()
        };
        check(ids == item.exemplar_ids, format!("{}: retrieved {:?} vs {:?}", m.id, item.exemplar_ids, ids))?;
        let shown: Vec<&AnnotatedMessage> = ids.iter().map(|id| by_id[id.as_str()]).collect();
        let predicted: FrameLabel = if shown.iter().any(|e| e.label.actor == m.label.actor) {
            m.label.clone()
        } else {
            let blocks: Vec<ExemplarBlock> = shown.iter().map(|e| ExemplarBlock::plain((*e).clone())).collect();
            let prompt = compose(&p.library, &pair.candidate, &m.text, &blocks, &p.taxonomy).map_err(|e| e.to_string())?;
            let seed = derive_seed(derive_seed_str(42, &m.id), common::conversation_hash(&prompt));
            labels[ChaCha8Rng::seed_from_u64(seed).random_range(0..labels.len())].clone()
        };
        check(item.predicted.as_ref() == Some(&predicted), format!("{}: prediction differs from replay", m.id))?;
        hits += usize::from(predicted == m.label);
    }
    Ok(hits)
}

fn c5_retrieval_depth(p: &Pipeline, out: &LoopOutcome, elapsed: Duration) -> Outcome {
    let mut counts = Vec::new();
    for (id, k) in [("r1-c1", 0), ("r1-c2", 3), ("r1-c3", 6)] {
        let pair = out.pairs.iter().find(|q| q.candidate.id == id).ok_or(format!("{id} missing"))?;
        check(pair.candidate.k == k, format!("{id} has k={}", pair.candidate.k))?;
        let replayed = coupled_replay(p, pair)?;
        let reported = (pair.report.exact_match * 225.0).round() as usize;
        check(replayed == reported, format!("k={k}: replay {replayed} vs reported {reported}"))?;
        counts.push(replayed);
    }
    check(counts == [3, 203, 210], format!("counts {counts:?}"))?;
    check(counts[0] < counts[1] && counts[1] < counts[2], "not strictly increasing in k")?;
    let best = select_final(&out.pairs).ok_or("no pairs")?;
    check(best.candidate.k == 6, format!("selected k={}", best.candidate.k))?;
    check(elapsed < Duration::from_secs(60), format!("loop took {elapsed:?}"))?;
    Ok(format!(
        "exact k0={:.4} k3={:.4} k6={:.4}; selected {} (k=6); loop {:.1}s",
        counts[0] as f64 / 225.0,
        counts[1] as f64 / 225.0,
        counts[2] as f64 / 225.0,
        best.candidate.id,
        elapsed.as_secs_f64()
    ))
}

fn c6_loop_shape(out: &LoopOutcome) -> Outcome {
    check(out.pairs.len() == 9, format!("{} pairs", out.pairs.len()))?;
    check(out.truncated.is_none(), "loop truncated")?;
    let best = out.best_so_far();
    check(best.len() == 3 && best.windows(2).all(|w| w[0] <= w[1]), format!("best so far {best:?}"))?;
    let key = |q: &SolutionPair| {
        (
            std::cmp::Reverse((q.report.exact_match * 1e9).round() as i64),
            std::cmp::Reverse((q.report.validity_rate * 1e9).round() as i64),
            q.probe_tokens,
            q.round,
            q.candidate.id.clone(),
        )
    };
    let argmax = out.pairs.iter().min_by_key(|q| key(q)).unwrap();
    let chosen = select_final(&out.pairs).unwrap();
    check(chosen.candidate.id == argmax.candidate.id, format!("selected {} vs {}", chosen.candidate.id, argmax.candidate.id))?;
    check(ranking(&out.pairs)[0].candidate.id == chosen.candidate.id, "ranking head differs from selection")?;
    check((chosen.report.exact_match - best[2]).abs() < 1e-12, "selection is not the best score")?;
    Ok(format!("9 pairs, best so far {:?}, selected {}", best.iter().map(|b| format!("{b:.4}")).collect::<Vec<_>>(), chosen.candidate.id))
}

fn c7_auto_cot(p: &Pipeline) -> Outcome {
    let exemplars = &p.train[..50];
    let labels = p.taxonomy.enumerate_labels();
    let mut counts = BTreeMap::new();
    for rules in ["always_gold", "never_gold", "noisy_autocot"] {
        let model = common::mock(rules, &p.taxonomy, &p.messages);
        let budget = CallBudget::unlimited();
        let syn = Synthesizer {
            model: &model,
            library: &p.library,
            taxonomy: &p.taxonomy,
            decoding: DecodingConfig::default().with_seed(7),
            samples: 5,
            parallelism: 4,
            budget: &budget,
        };
        let out = build_auto_cot_exemplars(&syn, exemplars).map_err(|e| e.to_string())?;
        for (b, ex) in out.blocks.iter().zip(exemplars) {
            check(b.message == *ex, "block order differs from input")?;
            if let Some(r) = &b.rationale {
                check(r.agreed && r.final_label == ex.label, format!("{}: kept a disagreeing rationale", ex.id))?;
            }
        }
        counts.insert(rules, out.cot_count());
        if rules == "noisy_autocot" {
            for (b, ex) in out.blocks.iter().zip(exemplars) {
                let conv = common::conversation_hash(&rationale_prompt(&p.library, &p.taxonomy, &ex.text).unwrap());
                let any = (0..5u64).any(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(7, i), conv));
                    rng.random::<f64>() >= 0.5 || labels[rng.random_range(0..labels.len())] == ex.label
                });
                check(b.rationale.is_some() == any, format!("{}: cot form differs from replay", ex.id))?;
            }
        }
    }
    check(counts["always_gold"] == 50, format!("always {}", counts["always_gold"]))?;
    check(counts["never_gold"] == 0, format!("never {}", counts["never_gold"]))?;
    check(counts["noisy_autocot"] == 49, format!("noisy {}", counts["noisy_autocot"]))?;
    Ok(format!("cot exemplars: always 50/50, never 0/50, noisy {}/50 (replay)", counts["noisy_autocot"]))
}

fn c8_leakage(p: &Pipeline, out: &LoopOutcome) -> Outcome {
    let train_ids: HashSet<&str> = p.train.iter().map(|m| m.id.as_str()).collect();
    let train_texts: HashSet<&str> = p.train.iter().map(|m| m.text.as_str()).collect();
    let held_out: HashSet<&str> = p.val.iter().chain(&p.test).map(|m| m.id.as_str()).collect();

    // Validation prompts come from the search run itself; test prompts
    // from labeling the test split with the selected candidate.
    let target = common::mock("relevance_coupled", &p.taxonomy, &p.messages);
    let budget = CallBudget::unlimited();
    let ctx = eval_ctx(p, &target, &budget).with_prompts(true);
    let final_candidate = &select_final(&out.pairs).unwrap().candidate;
    let test_report = evaluate_candidate(&ctx, final_candidate, &p.test).map_err(|e| e.to_string())?;
    let items = out.pairs.iter().flat_map(|q| &q.report.items).chain(&test_report.items);

    let (mut prompts, mut shown) = (0, 0);
    for item in items {
        check(held_out.contains(item.id.as_str()), format!("{} is not a held-out message", item.id))?;
        for id in &item.exemplar_ids {
            check(train_ids.contains(id.as_str()) && !held_out.contains(id.as_str()), format!("{}: exemplar {id} is not training data", item.id))?;
        }
        let prompt = item.prompt.as_deref().ok_or("prompt not kept")?;
        let all: Vec<&str> = prompt.lines().collect();
        let lines: Vec<&str> = all
            .windows(2)
            .filter(|w| w[0].starts_with("Retrieved Example ") || w[0].starts_with("Example "))
            .filter_map(|w| w[1].strip_prefix("Text: \"").and_then(|r| r.strip_suffix('"')))
            .collect();
        check(lines.len() == item.exemplar_ids.len(), format!("{}: {} exemplar lines for {} ids", item.id, lines.len(), item.exemplar_ids.len()))?;
        for text in lines {
            check(train_texts.contains(text), format!("{}: exemplar text not from training split", item.id))?;
        }
        prompts += 1;
        shown += item.exemplar_ids.len();
    }
    check(prompts == 9 * 225 + 225, format!("{prompts} prompts scanned"))?;
    Ok(format!("{prompts} validation/test prompts, {shown} exemplars, none held out"))
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn cli(args: &[&str], config: &Path, out: &Path) -> Result<String, String> {
    let mut argv = vec!["promptforge".to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    argv.extend(["--config".into(), config.display().to_string(), "--out".into(), out.display().to_string()]);
    let parsed = promptforge::cli::Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    promptforge::cli::run(&parsed, &mut buf).map_err(|e| format!("{args:?}: {e}"))?;
    Ok(String::from_utf8(buf).unwrap())
}

fn c9_reproducible_runs() -> Outcome {
    let dir = common::temp_dir();
    let config = common::fixture("promptforge.toml");
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        for cmd in ["ingest", "index", "optimize"] {
            cli(&[cmd], &config, &out)?;
        }
        let mut files = files_under(&out);
        check(files.remove("run/metadata.json").is_some(), "metadata.json missing")?;
        trees.push(files);
    }
    check(trees[0].keys().eq(trees[1].keys()), "file sets differ")?;
    for (name, bytes) in &trees[0] {
        check(trees[1][name] == *bytes, format!("{name} differs"))?;
    }
    Ok(format!("{} artifact files byte-identical", trees[0].len()))
}

fn c10_decoding_on_the_wire() -> Outcome {
    let dir = common::temp_dir();
    let stub = common::StubServer::start(200, |_| {
        r#"{"choices": [{"message": {"content": "(\"Customer\", \"Unavailable\", \"On Vacation\")"}}]}"#.into()
    });
    let mut config = promptforge::cli::RunConfig::load(&common::fixture("promptforge.toml")).unwrap();
    config.endpoints.insert(
        "hosted".into(),
        EndpointSpec::Remote {
            url: stub.url.clone(),
            model: "frame-model".into(),
            token_env: None,
            timeout_secs: 10,
            max_retries: 0,
            reasoning: None,
        },
    );
    let path = dir.path().join("promptforge.toml");
    std::fs::write(&path, config.to_toml()).unwrap();
    let out = dir.path().join("out");
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "{\"id\": \"a\", \"text\": \"Khách đi vắng\"}\n{\"id\": \"b\", \"text\": \"Shop hết hàng\"}\n").unwrap();
    cli(&["ingest"], &path, &out)?;
    cli(&["index"], &path, &out)?;
    cli(
        &["infer", "--endpoint", "hosted", "--strategy", "zero_shot", "--input", input.to_str().unwrap()],
        &path,
        &out,
    )?;
    let bodies = stub.bodies();
    check(bodies.len() == 2, format!("{} requests", bodies.len()))?;
    for b in &bodies {
        check(b["temperature"] == 0.3, format!("temperature {}", b["temperature"]))?;
        check(b["top_p"] == 0.95, format!("top_p {}", b["top_p"]))?;
        check(b["top_k"] == 70, format!("top_k {}", b["top_k"]))?;
        check(b["max_tokens"] == 1024, format!("max_tokens {}", b["max_tokens"]))?;
        check(b["model"] == "frame-model", "model name not forwarded")?;
    }
    Ok("temperature 0.3, top_p 0.95, top_k 70, max_tokens 1024 on every request".into())
}

#[test]
fn acceptance() {
    let p = Pipeline::load();
    let mut results = vec![
        criterion(1, "exact k-NN on 200 messages", c1_knn),
        criterion(2, "label round-trip", c2_round_trip),
        criterion(3, "deterministic 70/15/15 split", c3_split),
        criterion(4, "corpus statistics", c4_stats),
    ];
    let (outcome, elapsed) = full_loop(&p);
    results.push(criterion(5, "retrieval depth ordering", || c5_retrieval_depth(&p, &outcome, elapsed)));
    results.push(criterion(6, "search loop shape and selection", || c6_loop_shape(&outcome)));
    results.push(criterion(7, "Auto-CoT rationale filtering", || c7_auto_cot(&p)));
    results.push(criterion(8, "no held-out leakage", || c8_leakage(&p, &outcome)));
    results.push(criterion(9, "reproducible optimize runs", c9_reproducible_runs));
    results.push(criterion(10, "decoding parameters reach the endpoint", c10_decoding_on_the_wire));
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
