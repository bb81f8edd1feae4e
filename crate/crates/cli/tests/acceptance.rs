//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.
//!
//! Set `UPDATE_GOLDEN=1` to rewrite the pipeline golden traces.

#[path = "common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use guardrail_core::backends::mock::{
    GenerationScript, MissPolicy, NgramEmbedder, ScriptedGeneration, ScriptedReasoning,
};
use guardrail_core::backends::{BackendHandle, EmbeddingBackend};
use guardrail_core::customizer::{
    run_chain, StaticBlocklist, StaticReachability, UrlClassification, UrlWarningWrapper, Wrapper,
    UNREACHABLE_PROBE_FAILURE,
};
use guardrail_core::dataprep::{
    parse_detection_prompt, process_dataset, FailureMode, RawHaluRecord, HALLUCINATED_PREFIX,
    NOT_HALLUCINATED_RESPONSE,
};
use guardrail_core::grounding::{
    build_index, callback, run_callback_experiment, ExperimentConfig, IndexStrategy, KnowledgeRecord,
    LabeledQuery, QueryMode, SyntheticRephraser,
};
use guardrail_core::pipeline::{Guardrail, IndeterminateAction, PipelinePolicy, Query, StageName};
use guardrail_core::safety::{
    compute_p_halu, detect_hallucination, FirstTokenDistribution, PHalu, TokenCandidate, YesNoTokenSets,
    INDETERMINATE_REASON,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

type Criterion = fn() -> Result<String>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("1 p_halu oracle equivalence", ac1_p_halu_oracle),
        ("2 detector path", ac2_detector_path),
        ("3 callback exactness", ac3_callback_exactness),
        ("4 index strategy direction", ac4_index_strategy),
        ("5 url wrapper", ac5_url_wrapper),
        ("6 data prep", ac6_data_prep),
        ("7 pipeline integration", ac7_pipeline_goldens),
        ("8 service conformance", ac8_service),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(anyhow::anyhow!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} ({secs:.2}s)"),
            Err(e) => {
                failed += 1;
                println!("FAIL [{name}] {e:#} ({secs:.2}s)");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// 1

const ALPHABET: [&str; 5] = ["Yes", " yes", "No", " no", "The"];

/// Every vector of 5 tenths summing to at most 10.
fn grid(parts: usize, budget: u32) -> Vec<Vec<u32>> {
    if parts == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for head in 0..=budget {
        for mut tail in grid(parts - 1, budget - head) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn distribution(probs: &[f64]) -> Result<FirstTokenDistribution> {
    let candidates = ALPHABET
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (s, p))| TokenCandidate::new(i as u32, *s, *p))
        .collect();
    Ok(FirstTokenDistribution::top_k(candidates, ALPHABET.len())?)
}

/// Sum-and-divide on the integer grid: tokens 0,1 are yes, 2,3 are no.
fn oracle(tenths: &[u32]) -> Option<f64> {
    let yes = tenths[0] + tenths[1];
    let no = tenths[2] + tenths[3];
    (yes + no > 0).then(|| yes as f64 / (yes + no) as f64)
}

fn close(a: PHalu, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (PHalu::Probability(x), Some(y)) => (x - y).abs() <= tol,
        (PHalu::Indeterminate, None) => true,
        _ => false,
    }
}

fn ac1_p_halu_oracle() -> Result<String> {
    let start = Instant::now();
    let sets = YesNoTokenSets::default();
    let swapped = sets.swapped();
    let cases = grid(ALPHABET.len(), 10);
    let mut checks = 0usize;
    for tenths in &cases {
        let probs: Vec<f64> = tenths.iter().map(|&t| t as f64 / 10.0).collect();
        let p = compute_p_halu(&distribution(&probs)?, &sets);
        let expected = oracle(tenths);
        ensure!(close(p, expected, 1e-12), "{tenths:?}: got {p:?}, oracle {expected:?}");

        for c in [0.5, 0.25, 0.1, 1e-3] {
            let scaled: Vec<f64> = probs.iter().map(|x| x * c).collect();
            let q = compute_p_halu(&distribution(&scaled)?, &sets);
            ensure!(close(q, p.value(), 1e-12), "{tenths:?}: scaling by {c} gave {q:?}, base {p:?}");
            checks += 1;
        }

        let comp = compute_p_halu(&distribution(&probs)?, &swapped);
        ensure!(
            close(comp, p.value().map(|x| 1.0 - x), 1e-12),
            "{tenths:?}: complement {comp:?} vs {p:?}"
        );

        let relevant: u32 = tenths[..4].iter().sum();
        for t in 0..=(10 - relevant) {
            let mut varied = probs.clone();
            varied[4] = t as f64 / 10.0;
            let q = compute_p_halu(&distribution(&varied)?, &sets);
            ensure!(close(q, p.value(), 1e-12), "{tenths:?}: irrelevant mass {t}/10 changed {p:?} to {q:?}");
            checks += 1;
        }
        checks += 2;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{} distributions, {checks} checks", cases.len()))
}

// ---------------------------------------------------------------------------
// 2

struct DetectorCase {
    name: &'static str,
    script: GenerationScript,
    top_k: usize,
    threshold: f64,
    action: IndeterminateAction,
    p_halu: f64,
    hallucinated: bool,
    indeterminate: bool,
    reason: &'static str,
}

fn case(name: &'static str, script: GenerationScript, p_halu: f64, hallucinated: bool, reason: &'static str) -> DetectorCase {
    DetectorCase {
        name,
        script,
        top_k: 10,
        threshold: 0.5,
        action: IndeterminateAction::TreatHallucinated,
        p_halu,
        hallucinated,
        indeterminate: false,
        reason,
    }
}

fn indeterminate(name: &'static str, script: GenerationScript, top_k: usize, action: IndeterminateAction) -> DetectorCase {
    let hallucinated = action == IndeterminateAction::TreatHallucinated;
    DetectorCase {
        name,
        script,
        top_k,
        threshold: 0.5,
        action,
        p_halu: if hallucinated { 1.0 } else { 0.0 },
        hallucinated,
        indeterminate: true,
        reason: if hallucinated { INDETERMINATE_REASON } else { "" },
    }
}

fn detector_cases() -> Vec<DetectorCase> {
    use GenerationScript as G;
    use IndeterminateAction::{TreatHallucinated as TH, TreatSafe as TS};
    let yes_text = "Yes, the answer names the wrong year.";
    let reason = "the answer names the wrong year.";
    vec![
        case("yes heavy", G::probs(yes_text, &[("Yes", 0.9), ("No", 0.1)]), 0.9, true, reason),
        case(
            "yes heavy with variants",
            G::probs(yes_text, &[("Yes", 0.6), (" yes", 0.2), ("No", 0.1), ("The", 0.1)]),
            8.0 / 9.0,
            true,
            reason,
        ),
        case("yes only", G::probs(yes_text, &[("Yes", 1.0)]), 1.0, true, reason),
        case(
            "yes without comma",
            G::probs("Yes the date is invented.", &[("Yes", 0.7), ("No", 0.3)]),
            0.7,
            true,
            "the date is invented.",
        ),
        case("no heavy", G::probs("No.", &[("No", 0.95), ("Yes", 0.05)]), 0.05, false, ""),
        case(
            "no heavy with variants",
            G::probs("No.", &[("No", 0.5), (" no", 0.3), ("Yes", 0.1), ("The", 0.1)]),
            1.0 / 9.0,
            false,
            "",
        ),
        case("no only", G::probs("No.", &[("No", 1.0)]), 0.0, false, ""),
        case(
            "boundary at default threshold",
            G::probs(yes_text, &[("Yes", 0.4), ("No", 0.4), ("The", 0.2)]),
            0.5,
            true,
            reason,
        ),
        DetectorCase {
            threshold: 0.75,
            ..case("boundary at 0.75", G::probs(yes_text, &[("Yes", 0.375), ("No", 0.125)]), 0.75, true, reason)
        },
        DetectorCase {
            threshold: 0.500001,
            ..case("just below threshold", G::probs("Yes, maybe.", &[("Yes", 0.5), ("No", 0.5)]), 0.5, false, "")
        },
        DetectorCase {
            threshold: 0.9,
            ..case("high threshold", G::probs(yes_text, &[("Yes", 0.8), ("No", 0.2)]), 0.8, false, "")
        },
        case(
            "logits yes heavy",
            G::logits(yes_text, &[("Yes", 2.0), ("No", 0.0)]),
            0.8807970779778823,
            true,
            reason,
        ),
        case(
            "logits boundary",
            G::logits(yes_text, &[("Yes", 0.0), ("No", 0.0), ("The", 0.0)]),
            0.5,
            true,
            reason,
        ),
        case(
            "logits no heavy",
            G::logits("No.", &[("No", 3.0), ("Yes", 1.0), ("The", 2.0)]),
            0.11920292202211755,
            false,
            "",
        ),
        DetectorCase {
            top_k: 3,
            ..case(
                "yes inside truncated top-k",
                G::probs(yes_text, &[("The", 0.4), ("Yes", 0.3), ("Maybe", 0.2), ("No", 0.1)]),
                1.0,
                true,
                reason,
            )
        },
        indeterminate("only irrelevant tokens, treat hallucinated", G::probs("The end.", &[("The", 0.7), ("A", 0.3)]), 10, TH),
        indeterminate("only irrelevant tokens, treat safe", G::probs("The end.", &[("The", 0.7), ("A", 0.3)]), 10, TS),
        indeterminate("zero yes and no mass", G::probs("The end.", &[("The", 1.0), ("Yes", 0.0), ("No", 0.0)]), 10, TH),
        indeterminate("first word only", G::text("Certainly not."), 10, TH),
        indeterminate(
            "yes and no cut by top-k, treat safe",
            G::probs(yes_text, &[("The", 0.5), ("Maybe", 0.3), ("Yes", 0.15), ("No", 0.05)]),
            2,
            TS,
        ),
    ]
}

fn ac2_detector_path() -> Result<String> {
    let cases = detector_cases();
    ensure!(cases.len() == 20, "expected 20 cases, have {}", cases.len());
    let sets = YesNoTokenSets::default();
    let mut matched = 0;
    let mut mismatches = Vec::new();
    for c in &cases {
        let backend = ScriptedGeneration::new(c.script.clone());
        let policy = PipelinePolicy {
            halu_threshold: c.threshold,
            top_k_tokens: c.top_k,
            indeterminate_hallucination_action: c.action,
            ..PipelinePolicy::default()
        };
        let a = detect_hallucination(&backend, "In which year did it open?", "It opened in 1998.", "1989", &policy, &sets)?;
        let ok = (a.p_halu - c.p_halu).abs() <= 1e-12
            && a.is_hallucinated == c.hallucinated
            && a.indeterminate == c.indeterminate
            && a.reason == c.reason;
        if ok {
            matched += 1;
        } else {
            mismatches.push(format!("{}: got {a:?}", c.name));
        }
    }
    ensure!(mismatches.is_empty(), "{}", mismatches.join("; "));
    Ok(format!("{matched}/{} scripted cases match", cases.len()))
}

// ---------------------------------------------------------------------------
// 3

const VOCAB: &[&str] = &[
    "river", "stone", "copper", "lantern", "harbor", "meadow", "engine", "violet", "summit", "orchard",
    "ledger", "falcon", "canyon", "ember", "glacier", "timber", "velvet", "beacon", "quarry", "saddle",
    "thistle", "marble", "cobalt", "prairie", "anchor", "willow", "furnace", "parcel", "compass", "granite",
    "harvest", "island", "juniper", "kettle", "lagoon", "mosaic", "nectar", "oyster", "pepper", "quartz",
];

fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect()
}

fn synthetic_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<KnowledgeRecord> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(6..14);
            let key_len = rng.random_range(2..5);
            KnowledgeRecord::new(format!("r{i:03}"), words(rng, len).join(" ")).with_key(words(rng, key_len).join(" "))
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Exhaustive top-k membership count, independent of the index.
fn brute_force_hits(
    corpus: &[KnowledgeRecord],
    strategy: IndexStrategy,
    queries: &[LabeledQuery],
    k: usize,
    embedder: &dyn EmbeddingBackend,
) -> Result<usize> {
    let docs: Vec<(String, Vec<f64>)> = corpus
        .iter()
        .map(|r| {
            let text = match strategy {
                IndexStrategy::WholeKnowledge => &r.text,
                IndexStrategy::KeyInformation => r.key_text.as_ref().unwrap(),
            };
            Ok((r.id.clone(), embedder.embed(text)?))
        })
        .collect::<Result<_>>()?;
    let mut hits = 0;
    for q in queries {
        let qv = embedder.embed(&q.query_text)?;
        let mut scored: Vec<(f64, &str)> = docs.iter().map(|(id, v)| (cosine(&qv, v), id.as_str())).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        if scored.iter().take(k).any(|(_, id)| *id == q.relevant_record_id) {
            hits += 1;
        }
    }
    Ok(hits)
}

fn ac3_callback_exactness() -> Result<String> {
    let start = Instant::now();
    let embedder = NgramEmbedder::default();
    let sizes = [20, 33, 47, 64, 81, 100];
    let mut comparisons = 0;
    for (seed, &n) in sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed as u64);
        let corpus = synthetic_corpus(&mut rng, n);
        for strategy in [IndexStrategy::WholeKnowledge, IndexStrategy::KeyInformation] {
            let index = build_index(&corpus, strategy, &embedder)?;
            let queries: Vec<LabeledQuery> = sample(&mut rng, n, n.min(25))
                .into_iter()
                .map(|i| {
                    let r = &corpus[i];
                    let source: Vec<&str> = match strategy {
                        IndexStrategy::WholeKnowledge => r.text.split(' ').collect(),
                        IndexStrategy::KeyInformation => r.key_text.as_deref().unwrap().split(' ').collect(),
                    };
                    let take = rng.random_range(1..=source.len());
                    let mut q: Vec<&str> = source.into_iter().take(take).collect();
                    q.extend(words(&mut rng, 2));
                    LabeledQuery {
                        query_text: q.join(" "),
                        relevant_record_id: r.id.clone(),
                    }
                })
                .collect();

            let mut previous = 0.0;
            let ks = (1..=10).chain((15..n).step_by(5)).chain([n, n + 5]);
            for k in ks {
                let got = callback(&index, &queries, k, &embedder)?;
                ensure!(got >= previous, "n={n} {strategy}: C_{k}={got} below the previous k ({previous})");
                previous = got;
                if [1, 3, 5, 10].contains(&k) {
                    let hits = brute_force_hits(&corpus, strategy, &queries, k, &embedder)?;
                    let expected = hits as f64 / queries.len() as f64;
                    ensure!(got == expected, "n={n} {strategy} k={k}: callback {got}, brute force {expected}");
                    comparisons += 1;
                }
                if k >= n {
                    ensure!(got == 1.0, "n={n} {strategy}: C_{k}={got} at k >= n");
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{} corpora x 2 strategies, {comparisons} brute-force comparisons", sizes.len()))
}

// ---------------------------------------------------------------------------
// 4

const ENTITY_SYLLABLES: &[&str] = &["ka", "lo", "mi", "ren", "sa", "tor", "vi", "zu", "bel", "dan", "or", "pe"];
const ATTRIBUTES: &[&str] = &["capital", "population", "founding year", "main export", "highest peak", "currency", "official language", "largest lake"];
const DEPARTMENTS: &[&str] = &["survey", "archive", "census", "trade", "geography"];

fn qa_corpus(seed: u64, n: usize) -> Vec<KnowledgeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..4);
        let entity: String = (0..syllables).map(|_| ENTITY_SYLLABLES[rng.random_range(0..ENTITY_SYLLABLES.len())]).collect();
        let attr = ATTRIBUTES[rng.random_range(0..ATTRIBUTES.len())];
        if !seen.insert((entity.clone(), attr)) {
            continue;
        }
        let mut name = entity.clone();
        name[..1].make_ascii_uppercase();
        let dept = DEPARTMENTS[rng.random_range(0..DEPARTMENTS.len())];
        let year = rng.random_range(1900..2024);
        let value = rng.random_range(10..10_000);
        let text = format!(
            "According to the {dept} office, the {attr} of {name} is listed as entry {value}. \
             This figure was last reviewed in {year} and is published in the annual {dept} report."
        );
        let question = format!("What is the {attr} of {name}?");
        out.push(KnowledgeRecord::new(format!("q{:03}", out.len()), text).with_key(question));
    }
    out
}

fn ac4_index_strategy() -> Result<String> {
    let embedder = NgramEmbedder::default();
    let corpus = qa_corpus(41, 80);
    let seed = 7;
    let rephraser = SyntheticRephraser::new(seed);
    let ks = vec![1, 3, 5, 10];
    let run = |strategy, mode| {
        let config = ExperimentConfig {
            strategy,
            query_mode: mode,
            k_values: ks.clone(),
            sample_size: Some(60),
            seed,
        };
        run_callback_experiment(&corpus, &config, &embedder, &rephraser)
    };
    let mut summary = Vec::new();
    for mode in [QueryMode::Original, QueryMode::Rephrased] {
        let key = run(IndexStrategy::KeyInformation, mode)?;
        let whole = run(IndexStrategy::WholeKnowledge, mode)?;
        ensure!(key == run(IndexStrategy::KeyInformation, mode)?, "{mode}: key_information not deterministic");
        ensure!(whole == run(IndexStrategy::WholeKnowledge, mode)?, "{mode}: whole_knowledge not deterministic");
        for (a, b) in key.iter().zip(&whole) {
            ensure!(
                a.callback >= b.callback,
                "{mode} k={}: key_information {} < whole_knowledge {}",
                a.k,
                a.callback,
                b.callback
            );
        }
        if mode == QueryMode::Original {
            ensure!(
                key[0].callback > whole[0].callback,
                "original k=1: key_information {} not above whole_knowledge {}",
                key[0].callback,
                whole[0].callback
            );
        }
        summary.push(format!(
            "{mode} C_1 {:.3} vs {:.3}",
            key[0].callback, whole[0].callback
        ));
    }
    Ok(summary.join(", "))
}

// ---------------------------------------------------------------------------
// 5

#[derive(Debug, Clone, Copy)]
enum Seeded {
    Malicious,
    Ok,
    NotFound(u16),
    ServerError(u16),
    ProbeFails,
}

fn ac5_url_wrapper() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let records = qa_corpus(55, 30);
    let malicious: BTreeSet<usize> = sample(&mut rng, 30, 6).into_iter().collect();

    let mut blocklisted = Vec::new();
    let mut reach = StaticReachability::new();
    let mut texts = Vec::new();
    let mut truth: Vec<BTreeMap<String, UrlClassification>> = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let mut urls = Vec::new();
        if malicious.contains(&i) {
            urls.push((format!("http://malware{i}.example/payload"), Seeded::Malicious));
        }
        let extra = match rng.random_range(0..6) {
            0 => None,
            1 => Some(Seeded::NotFound([403, 404, 410][rng.random_range(0..3)])),
            2 => Some(Seeded::ServerError(503)),
            3 => Some(Seeded::ProbeFails),
            _ => Some(Seeded::Ok),
        };
        if let Some(kind) = extra {
            urls.push((format!("https://site{i}.example/docs/page{}", rng.random_range(0..100)), kind));
        }
        if !malicious.contains(&i) && rng.random_bool(0.3) {
            urls.push((format!("https://mirror{i}.example/ref"), Seeded::Ok));
        }

        let mut expected = BTreeMap::new();
        for (url, kind) in &urls {
            let class = match kind {
                Seeded::Malicious => {
                    blocklisted.push(url.clone());
                    UrlClassification::Malicious
                }
                Seeded::Ok => {
                    reach = reach.with_status(url.clone(), 200);
                    UrlClassification::Safe { status: Some(200) }
                }
                Seeded::NotFound(s) => {
                    reach = reach.with_status(url.clone(), *s);
                    UrlClassification::Unreachable { status: *s }
                }
                Seeded::ServerError(s) => {
                    reach = reach.with_status(url.clone(), *s);
                    UrlClassification::Safe { status: Some(*s) }
                }
                Seeded::ProbeFails => {
                    reach = reach.with_failure(url.clone());
                    UrlClassification::Unreachable {
                        status: UNREACHABLE_PROBE_FAILURE,
                    }
                }
            };
            expected.insert(url.clone(), class);
        }
        let links: Vec<String> = urls.iter().map(|(u, _)| format!("{u}.")).collect();
        let text = if links.is_empty() {
            record.text.clone()
        } else {
            format!("{} More at {}", record.text, links.join(" Also see "))
        };
        texts.push(text);
        truth.push(expected);
    }
    ensure!(blocklisted.len() == 6, "seeded {} malicious texts", blocklisted.len());

    let generation = Arc::new(ScriptedGeneration::echo());
    let wrapper = Arc::new(UrlWarningWrapper::new(Arc::new(StaticBlocklist::new(blocklisted)), Arc::new(reach)));
    let guardrail = Guardrail::new()
        .with_backend(BackendHandle::Generation(generation.clone()))
        .with_wrapper(wrapper.clone());

    let mut detected = 0;
    let mut urls_total = 0;
    let mut urls_correct = 0;
    let mut elapsed = Duration::ZERO;
    for (text, expected) in texts.iter().zip(&truth) {
        let start = Instant::now();
        let outcome = run_chain(text, guardrail.wrappers())?;
        elapsed += start.elapsed();

        let unsafe_urls: BTreeSet<&String> = expected.iter().filter(|(_, c)| c.is_unsafe()).map(|(u, _)| u).collect();
        let listed_ok = unsafe_urls.iter().all(|u| outcome.text.contains(&format!("- {u} (")))
            && outcome.text.matches("\n- ").count() == unsafe_urls.len();
        if outcome.modified == !unsafe_urls.is_empty() && (unsafe_urls.is_empty() || listed_ok) {
            detected += 1;
        }

        let findings: BTreeMap<String, UrlClassification> =
            wrapper.findings(text)?.into_iter().map(|f| (f.url, f.classification)).collect();
        ensure!(findings.len() == expected.len(), "found {:?}, seeded {:?}", findings.keys(), expected.keys());
        for (url, class) in expected {
            urls_total += 1;
            if findings.get(url) == Some(class) {
                urls_correct += 1;
            }
        }
    }
    let _ = wrapper.name();
    let mean_ms = elapsed.as_secs_f64() * 1000.0 / texts.len() as f64;
    ensure!(detected == texts.len(), "detection accuracy {detected}/{}", texts.len());
    ensure!(urls_correct == urls_total, "classification accuracy {urls_correct}/{urls_total}");
    ensure!(mean_ms < 50.0, "mean latency {mean_ms:.3} ms");
    ensure!(generation.calls() == 0, "generation backend called {} times", generation.calls());
    Ok(format!(
        "detection {detected}/30, classification {urls_correct}/{urls_total}, mean {mean_ms:.3} ms/text, 0 generation calls"
    ))
}

// ---------------------------------------------------------------------------
// 6

fn ac6_data_prep() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let records: Vec<RawHaluRecord> = (0..200)
        .map(|i| RawHaluRecord {
            question: format!("{}? ({i})", words(&mut rng, 5).join(" ")),
            context: if rng.random_bool(0.1) { String::new() } else { words(&mut rng, 12).join(" ") },
            llm_answer: words(&mut rng, 6).join(" "),
            label: rng.random_bool(0.5),
        })
        .collect();
    let positives = records.iter().filter(|r| r.label).count();
    let reasoning = ScriptedReasoning::new(MissPolicy::Fallback("it contradicts the context.".into()));
    let out = process_dataset(&records, &reasoning, FailureMode::Abort)?;
    ensure!(out.records.len() == 200, "{} training records", out.records.len());
    ensure!(out.skipped.is_empty(), "skipped {:?}", out.skipped);
    for (i, (raw, rec)) in records.iter().zip(&out.records).enumerate() {
        if raw.label {
            ensure!(rec.response.starts_with(HALLUCINATED_PREFIX), "record {i}: {:?}", rec.response);
            ensure!(rec.response.starts_with("Yes, "), "record {i}: {:?}", rec.response);
        } else {
            ensure!(rec.response == NOT_HALLUCINATED_RESPONSE && rec.response == "No.", "record {i}: {:?}", rec.response);
        }
        let parsed = parse_detection_prompt(&rec.prompt).with_context(|| format!("record {i}: prompt does not parse"))?;
        ensure!(
            parsed == (raw.question.clone(), raw.context.clone(), raw.llm_answer.clone()),
            "record {i}: round trip gave {parsed:?}"
        );
    }
    ensure!(reasoning.calls() == positives, "reasoning calls {} != {positives} positives", reasoning.calls());
    Ok(format!("200 records, {positives} positives, {} reasoning calls", reasoning.calls()))
}

// ---------------------------------------------------------------------------
// 7

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn ac7_pipeline_goldens() -> Result<String> {
    let fixture = common::Fixture::new();
    let config = fixture.config();
    let guardrail = fixture.guardrail();
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut statuses = BTreeSet::new();
    let mut written = 0;
    for (name, query, expected_status) in common::SCENARIOS {
        let response = guardrail.run(&Query::new(*query), &config.policy)?;
        let status = serde_json::to_value(response.status)?;
        ensure!(status == *expected_status, "{name}: status {status}");
        statuses.insert(expected_status.to_string());

        let doc = json!({
            "query": query,
            "status": status,
            "final_text": response.final_text,
            "trace": response.trace.without_timings(),
        });
        let rendered = serde_json::to_string_pretty(&doc)? + "\n";
        let path = golden_dir().join(format!("{name}.json"));
        if update {
            std::fs::create_dir_all(golden_dir())?;
            std::fs::write(&path, &rendered)?;
            written += 1;
        } else {
            let golden = std::fs::read_to_string(&path)
                .with_context(|| format!("missing golden {} (run with UPDATE_GOLDEN=1)", path.display()))?;
            ensure!(golden == rendered, "{name}: trace differs from {}", path.display());
        }

        if *name == "repaired" {
            let reason = response
                .trace
                .get(StageName::HallucinationDetection)
                .and_then(|r| r.artifacts["reason"].as_str())
                .context("no detector reason")?;
            ensure!(reason == common::HOURS_REASON, "detector reason {reason:?}");
            let prompt = response
                .trace
                .get(StageName::Repairer)
                .and_then(|r| r.artifacts["prompt"].as_str())
                .context("no repairer prompt")?;
            ensure!(prompt.contains(reason), "reason not in repair prompt");
        }
    }
    let all: BTreeSet<String> = ["answered", "rejected", "flagged", "repaired"].map(String::from).into();
    ensure!(statuses == all, "statuses covered: {statuses:?}");
    if update {
        Ok(format!("wrote {written} goldens"))
    } else {
        Ok("4 scenarios, all statuses, traces match goldens".into())
    }
}

// ---------------------------------------------------------------------------
// 8

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatSchema {
    final_text: String,
    status: StatusSchema,
    #[serde(default)]
    trace: Option<Vec<StageSchema>>,
}

#[derive(Deserialize, PartialEq, Debug)]
#[serde(rename_all = "snake_case")]
enum StatusSchema {
    Answered,
    Rejected,
    Repaired,
    Flagged,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StageSchema {
    stage: StageNameSchema,
    verdict_summary: String,
    #[allow(dead_code)]
    elapsed_micros: u64,
    artifacts: serde_json::Map<String, Value>,
}

#[derive(Deserialize, PartialEq, PartialOrd, Debug, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum StageNameSchema {
    InputSafety,
    Grounding,
    Inference,
    HallucinationDetection,
    Customizer,
    Repairer,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InputSchema {
    label: LabelSchema,
    score: f64,
}

#[derive(Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
enum LabelSchema {
    Safe,
    Unsafe,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HaluSchema {
    p_halu: f64,
    is_hallucinated: bool,
    reason: String,
    indeterminate: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundSchema {
    query_text: String,
    contexts: Vec<ContextSchema>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextSchema {
    record: RecordSchema,
    similarity: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordSchema {
    id: String,
    text: String,
    #[allow(dead_code)]
    key_text: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RepairSchema {
    corrected_answer: String,
    #[allow(dead_code)]
    repaired: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomizeSchema {
    text: String,
    annotations: Vec<AnnotationSchema>,
    modified: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationSchema {
    wrapper_name: String,
    payload: serde_json::Map<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorSchema {
    error: String,
}

fn check_chat(v: &Value) -> Result<()> {
    let c: ChatSchema = serde_json::from_value(v.clone()).context("chat schema")?;
    ensure!(!c.final_text.is_empty(), "empty final_text");
    if let Some(trace) = c.trace {
        ensure!(!trace.is_empty(), "empty trace");
        ensure!(trace[0].stage == StageNameSchema::InputSafety, "trace does not start with input_safety");
        ensure!(trace.windows(2).all(|w| w[0].stage < w[1].stage), "trace out of stage order");
        ensure!(trace.iter().all(|s| !s.verdict_summary.is_empty()), "empty verdict summary");
        ensure!(trace.iter().all(|s| !s.artifacts.is_empty()), "empty artifacts");
        if c.status == StatusSchema::Rejected {
            ensure!(trace.len() == 1, "rejected trace has {} stages", trace.len());
        }
    }
    Ok(())
}

fn check_endpoint(path: &str, v: &Value) -> Result<()> {
    match path {
        "/v1/chat" => check_chat(v),
        "/v1/detect/input" => {
            let r: InputSchema = serde_json::from_value(v.clone())?;
            ensure!((0.0..=1.0).contains(&r.score), "score {}", r.score);
            ensure!((r.label == LabelSchema::Unsafe) == (r.score >= 0.5), "label disagrees with score");
            Ok(())
        }
        "/v1/detect/hallucination" => {
            let r: HaluSchema = serde_json::from_value(v.clone())?;
            ensure!((0.0..=1.0).contains(&r.p_halu), "p_halu {}", r.p_halu);
            ensure!(r.indeterminate || r.is_hallucinated == (r.p_halu >= 0.5), "verdict disagrees with p_halu");
            ensure!(r.is_hallucinated || r.reason.is_empty(), "reason on a safe verdict");
            Ok(())
        }
        "/v1/ground" => {
            let r: GroundSchema = serde_json::from_value(v.clone())?;
            ensure!(!r.query_text.is_empty() && !r.contexts.is_empty(), "empty grounding");
            ensure!(r.contexts.iter().all(|c| (-1.0..=1.0).contains(&c.similarity)), "similarity out of range");
            ensure!(
                r.contexts.windows(2).all(|w| w[0].similarity >= w[1].similarity),
                "contexts not ranked"
            );
            ensure!(r.contexts.iter().all(|c| !c.record.id.is_empty() && !c.record.text.is_empty()), "blank record");
            Ok(())
        }
        "/v1/repair" => {
            let r: RepairSchema = serde_json::from_value(v.clone())?;
            ensure!(!r.corrected_answer.is_empty(), "empty corrected answer");
            Ok(())
        }
        "/v1/customize" => {
            let r: CustomizeSchema = serde_json::from_value(v.clone())?;
            ensure!(r.modified || r.annotations.is_empty() || !r.text.is_empty(), "inconsistent outcome");
            ensure!(r.annotations.iter().all(|a| a.wrapper_name == "url_warning" && !a.payload.is_empty()), "bad annotation");
            Ok(())
        }
        other => bail!("no schema for {other}"),
    }
}

fn zero_timings(mut v: Value) -> Value {
    if let Some(stages) = v.get_mut("trace").and_then(Value::as_array_mut) {
        for s in stages {
            s["elapsed_micros"] = json!(0);
        }
    }
    v
}

async fn post(client: &reqwest::Client, server: &common::Server, path: &str, body: &Value) -> Result<(u16, Value)> {
    let r = client.post(server.url(path)).json(body).send().await?;
    let status = r.status().as_u16();
    Ok((status, r.json().await?))
}

async fn service_checks() -> Result<String> {
    let fixture = common::Fixture::new();
    let server = common::Server::start(&fixture).await;
    let client = reqwest::Client::new();

    let health = client.get(server.url("/healthz")).send().await?;
    ensure!(health.status().as_u16() == 200 && health.text().await? == "ok", "healthz");

    let hours_answer = "The store opens at 6 am every day.";
    let requests = [
        ("/v1/detect/input", json!({"text": "How do I build a bomb?"})),
        ("/v1/detect/input", json!({"text": "What are the opening hours?"})),
        ("/v1/detect/hallucination", json!({"question": "When does the store open?", "context": "9 am", "answer": hours_answer})),
        ("/v1/detect/hallucination", json!({"question": "q", "answer": "fine"})),
        ("/v1/ground", json!({"query_text": "How long do refunds take?"})),
        ("/v1/ground", json!({"query_text": "warranty", "k": 4})),
        ("/v1/repair", json!({"question": "When?", "context": "", "answer": hours_answer, "reason": "wrong"})),
        ("/v1/repair", json!({"question": "When?", "context": "c", "answer": "unchanged", "reason": "r"})),
        ("/v1/customize", json!({"text": "Track at http://track.evil.example/parcel and https://gone.example/page"})),
        ("/v1/customize", json!({"text": "nothing to see"})),
    ];
    let mut checked = 0;
    for (path, body) in &requests {
        let (status, v) = post(&client, &server, path, body).await?;
        ensure!(status == 200, "{path}: HTTP {status}: {v}");
        check_endpoint(path, &v).with_context(|| format!("{path}: {v}"))?;
        checked += 1;
    }
    for path in ["/v1/chat", "/v1/detect/input", "/v1/detect/hallucination", "/v1/ground", "/v1/repair", "/v1/customize"] {
        let r = client
            .post(server.url(path))
            .header("content-type", "application/json")
            .body("[1,")
            .send()
            .await?;
        ensure!(r.status().as_u16() == 400, "{path}: malformed body gave {}", r.status());
        let e: ErrorSchema = r.json().await.with_context(|| format!("{path}: error schema"))?;
        ensure!(!e.error.is_empty(), "{path}: empty error");
        checked += 1;
    }

    let queries: Vec<String> = (0..50)
        .map(|i| {
            let (_, q, _) = common::SCENARIOS[i % common::SCENARIOS.len()];
            if i % 5 == 4 {
                format!("{q} ({i})")
            } else {
                q.to_string()
            }
        })
        .collect();
    let mut sequential = Vec::new();
    for q in &queries {
        let (status, v) = post(&client, &server, "/v1/chat", &json!({"text": q})).await?;
        ensure!(status == 200, "chat HTTP {status}");
        check_chat(&v).with_context(|| format!("/v1/chat: {v}"))?;
        sequential.push(zero_timings(v));
    }
    let handles: Vec<_> = queries
        .iter()
        .map(|q| {
            let client = client.clone();
            let url = server.url("/v1/chat");
            let body = json!({"text": q});
            tokio::spawn(async move { client.post(url).json(&body).send().await?.json::<Value>().await })
        })
        .collect();
    let mut concurrent = Vec::new();
    for h in handles {
        concurrent.push(zero_timings(h.await??));
    }
    let differing = sequential.iter().zip(&concurrent).filter(|(a, b)| a != b).count();
    ensure!(differing == 0, "{differing}/50 concurrent responses differ from sequential");
    let statuses: BTreeSet<String> = sequential.iter().map(|v| v["status"].to_string()).collect();
    ensure!(statuses.len() == 4, "chat covered statuses {statuses:?}");

    server.stop().await;
    Ok(format!("{checked} endpoint responses schema-valid, 50 concurrent chats identical to sequential"))
}

fn ac8_service() -> Result<String> {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()?
        .block_on(service_checks())
}
