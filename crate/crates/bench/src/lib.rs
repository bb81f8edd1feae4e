//! Deterministic inputs shared by the benchmarks.

use std::sync::Arc;

use guardrail_core::backends::mock::{
    GenerationScript, KeywordModeration, NgramEmbedder, ScriptedFixing, ScriptedGeneration,
};
use guardrail_core::backends::BackendHandle;
use guardrail_core::customizer::{StaticBlocklist, StaticReachability, UrlWarningWrapper};
use guardrail_core::grounding::{build_index, IndexStrategy, KnowledgeRecord};
use guardrail_core::pipeline::Guardrail;
use guardrail_core::safety::{FirstTokenDistribution, TokenCandidate};

const WORDS: &[&str] = &[
    "river", "stone", "copper", "lantern", "harbor", "meadow", "engine", "violet", "summit", "orchard",
    "ledger", "falcon", "canyon", "ember", "glacier", "timber", "velvet", "beacon", "quarry", "saddle",
];

fn phrase(seed: usize, len: usize) -> String {
    (0..len)
        .map(|j| WORDS[(seed * 7 + j * 13 + seed / 3) % WORDS.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn corpus(n: usize) -> Vec<KnowledgeRecord> {
    (0..n)
        .map(|i| KnowledgeRecord::new(format!("r{i}"), phrase(i, 12)).with_key(phrase(i + 1, 4)))
        .collect()
}

/// `len` candidates with geometrically decaying mass.
pub fn distribution(len: usize) -> FirstTokenDistribution {
    let surfaces = ["Yes", "No", " yes", " no", "The", "A", "It", "I"];
    let mut mass = 0.5;
    let candidates = (0..len)
        .map(|i| {
            let c = TokenCandidate::new(i as u32, surfaces[i % surfaces.len()], mass);
            mass /= 2.0;
            c
        })
        .collect();
    FirstTokenDistribution::new(candidates, len).expect("valid distribution")
}

pub const BLOCKED_URL: &str = "http://blocked.example/x";
pub const MISSING_URL: &str = "https://missing.example/gone";

pub fn url_wrapper() -> UrlWarningWrapper {
    UrlWarningWrapper::new(
        Arc::new(StaticBlocklist::new([BLOCKED_URL])),
        Arc::new(StaticReachability::new().with_status(MISSING_URL, 404)),
    )
}

/// Texts with zero to three URLs each.
pub fn url_texts(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match i % 4 {
            0 => phrase(i, 20),
            1 => format!("{} see https://ok{i}.example/page", phrase(i, 20)),
            2 => format!("{} see {BLOCKED_URL} or {MISSING_URL}.", phrase(i, 20)),
            _ => format!("{} (https://a{i}.example, https://b{i}.example/q?x=1, {BLOCKED_URL})", phrase(i, 20)),
        })
        .collect()
}

/// All-mock pipeline over `corpus(n)`.
pub fn guardrail(n: usize) -> Guardrail {
    let embedder = Arc::new(NgramEmbedder::default());
    let index = build_index(&corpus(n), IndexStrategy::KeyInformation, embedder.as_ref()).expect("index");
    let generation = ScriptedGeneration::echo().with_contains(
        "#Answer#:",
        GenerationScript::probs("Yes, it is unsupported.", &[("Yes", 0.7), ("No", 0.3)]),
    );
    Guardrail::new()
        .with_backend(BackendHandle::Moderation(Arc::new(KeywordModeration::new().with_rule("bomb", 1.0))))
        .with_backend(BackendHandle::Generation(Arc::new(generation)))
        .with_backend(BackendHandle::Embedding(embedder))
        .with_backend(BackendHandle::Fixing(Arc::new(ScriptedFixing::echo())))
        .with_index(index)
        .with_wrapper(Arc::new(url_wrapper()))
}
