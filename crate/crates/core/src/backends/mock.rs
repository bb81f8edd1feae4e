//! Deterministic script-table backends.
//!
//! Each mock is a pure function of its input and its script, counts its
//! calls, and is immutable after construction apart from the counter.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{
    normalize, BackendError, BackendSlot, EmbeddingBackend, FixingBackend, GenerationBackend,
    GenerationOutput, ModerationBackend, ReasoningBackend,
};
use crate::safety::{FirstTokenDistribution, TokenCandidate};

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Default)]
struct CallCounter(AtomicUsize);

impl CallCounter {
    fn hit(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

/// Selects which script entry answers a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMatcher {
    Exact(String),
    Contains(String),
    /// FNV-1a of the prompt bytes.
    Hash(u64),
}

impl PromptMatcher {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            PromptMatcher::Exact(s) => prompt == s,
            PromptMatcher::Contains(s) => prompt.contains(s.as_str()),
            PromptMatcher::Hash(h) => fnv1a64(prompt.as_bytes()) == *h,
        }
    }
}

/// Keyword-scored moderation: the score is the highest score among rules
/// whose keyword occurs (case-insensitively) in the text.
#[derive(Debug, Default)]
pub struct KeywordModeration {
    rules: Vec<(String, f64)>,
    default_score: f64,
    calls: CallCounter,
}

impl KeywordModeration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, keyword: impl Into<String>, score: f64) -> Self {
        self.rules.push((keyword.into().to_lowercase(), score));
        self
    }

    pub fn with_default_score(mut self, score: f64) -> Self {
        self.default_score = score;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl ModerationBackend for KeywordModeration {
    fn classify(&self, text: &str) -> Result<f64, BackendError> {
        self.calls.hit();
        let lower = text.to_lowercase();
        Ok(self
            .rules
            .iter()
            .filter(|(k, _)| lower.contains(k.as_str()))
            .map(|(_, s)| *s)
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
            .unwrap_or(self.default_score))
    }
}

/// Scores for the first generated token, either as probabilities or as
/// logits over a (small) vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScores {
    Probs(Vec<(String, f64)>),
    Logits(Vec<(String, f64)>),
}

/// One scripted generation: output text plus first-token scores. When no
/// scores are given, the first whitespace-delimited word of `text` receives
/// probability 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationScript {
    pub text: String,
    #[serde(default)]
    pub first_token: Option<TokenScores>,
}

impl GenerationScript {
    pub fn text(text: impl Into<String>) -> Self {
        GenerationScript {
            text: text.into(),
            first_token: None,
        }
    }

    pub fn probs(text: impl Into<String>, probs: &[(&str, f64)]) -> Self {
        GenerationScript {
            text: text.into(),
            first_token: Some(TokenScores::Probs(
                probs.iter().map(|(s, p)| (s.to_string(), *p)).collect(),
            )),
        }
    }

    pub fn logits(text: impl Into<String>, logits: &[(&str, f64)]) -> Self {
        GenerationScript {
            text: text.into(),
            first_token: Some(TokenScores::Logits(
                logits.iter().map(|(s, l)| (s.to_string(), *l)).collect(),
            )),
        }
    }

    fn render(&self, text: String, top_k: usize) -> Result<GenerationOutput, BackendError> {
        let dist = match &self.first_token {
            Some(TokenScores::Probs(probs)) => {
                let candidates = probs
                    .iter()
                    .enumerate()
                    .map(|(i, (s, p))| TokenCandidate::new(i as u32, s.clone(), *p))
                    .collect();
                FirstTokenDistribution::top_k(candidates, top_k)
            }
            Some(TokenScores::Logits(logits)) => FirstTokenDistribution::from_logits(logits, top_k),
            None => first_word_distribution(&text, top_k),
        }
        .map_err(|e| BackendError::failure(BackendSlot::Generation, e.to_string()))?;
        Ok(GenerationOutput {
            text,
            first_token_distribution: dist,
        })
    }
}

fn first_word_distribution(
    text: &str,
    top_k: usize,
) -> Result<FirstTokenDistribution, crate::safety::DistributionError> {
    let candidates = text
        .split_whitespace()
        .next()
        .map(|w| vec![TokenCandidate::new(0, w, 1.0)])
        .unwrap_or_default();
    FirstTokenDistribution::top_k(candidates, top_k)
}

/// What a scripted generator does when no rule matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationFallback {
    Script(GenerationScript),
    /// Answer with the context blocks of a grounded prompt (or the question
    /// when there is no context).
    EchoContext,
    Fail,
}

#[derive(Debug)]
pub struct ScriptedGeneration {
    rules: Vec<(PromptMatcher, GenerationScript)>,
    fallback: GenerationFallback,
    calls: CallCounter,
}

impl ScriptedGeneration {
    pub fn new(fallback: GenerationScript) -> Self {
        Self::with_fallback(GenerationFallback::Script(fallback))
    }

    pub fn echo() -> Self {
        Self::with_fallback(GenerationFallback::EchoContext)
    }

    pub fn failing() -> Self {
        Self::with_fallback(GenerationFallback::Fail)
    }

    pub fn with_fallback(fallback: GenerationFallback) -> Self {
        ScriptedGeneration {
            rules: Vec::new(),
            fallback,
            calls: CallCounter::default(),
        }
    }

    pub fn with_rule(mut self, matcher: PromptMatcher, script: GenerationScript) -> Self {
        self.rules.push((matcher, script));
        self
    }

    pub fn with_exact(self, prompt: impl Into<String>, script: GenerationScript) -> Self {
        self.with_rule(PromptMatcher::Exact(prompt.into()), script)
    }

    pub fn with_contains(self, needle: impl Into<String>, script: GenerationScript) -> Self {
        self.with_rule(PromptMatcher::Contains(needle.into()), script)
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl GenerationBackend for ScriptedGeneration {
    fn generate(&self, prompt: &str, top_k: usize) -> Result<GenerationOutput, BackendError> {
        self.calls.hit();
        if top_k == 0 {
            return Err(BackendError::failure(
                BackendSlot::Generation,
                "top_k must be at least 1",
            ));
        }
        if let Some((_, script)) = self.rules.iter().find(|(m, _)| m.matches(prompt)) {
            return script.render(script.text.clone(), top_k);
        }
        match &self.fallback {
            GenerationFallback::Script(script) => script.render(script.text.clone(), top_k),
            GenerationFallback::EchoContext => {
                let text = echo_context(prompt);
                GenerationScript::text("").render(text, top_k)
            }
            GenerationFallback::Fail => Err(BackendError::failure(
                BackendSlot::Generation,
                "no scripted response for prompt",
            )),
        }
    }
}

fn echo_context(prompt: &str) -> String {
    const CONTEXT: &str = "#Context#: ";
    const QUESTION: &str = "#Question#: ";
    if let Some(start) = prompt.find(CONTEXT) {
        let body = &prompt[start + CONTEXT.len()..];
        let end = body.find("\n#Question#:").unwrap_or(body.len());
        return body[..end].to_string();
    }
    match prompt.find(QUESTION) {
        Some(start) => prompt[start + QUESTION.len()..].to_string(),
        None => prompt.to_string(),
    }
}

/// Hashed character n-gram embedder.
///
/// Lower-cased text is padded with one space on each side, every character
/// n-gram is hashed with FNV-1a into one of `dim` buckets, and the count
/// vector is L2-normalized.
#[derive(Debug)]
pub struct NgramEmbedder {
    dim: usize,
    n: usize,
    calls: CallCounter,
}

impl Default for NgramEmbedder {
    fn default() -> Self {
        NgramEmbedder::new(256, 3)
    }
}

impl NgramEmbedder {
    pub fn new(dim: usize, n: usize) -> Self {
        assert!(dim > 0 && n > 0, "dimension and n-gram size must be positive");
        NgramEmbedder {
            dim,
            n,
            calls: CallCounter::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    fn counts(&self, text: &str) -> Vec<f64> {
        let mut padded = String::with_capacity(text.len() + 2);
        padded.push(' ');
        padded.push_str(&text.to_lowercase());
        padded.push(' ');
        let chars: Vec<char> = padded.chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = [0u8; 4];
        for gram in chars.windows(self.n) {
            let mut bytes = Vec::with_capacity(self.n * 4);
            for c in gram {
                bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
            v[(fnv1a64(&bytes) % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

impl EmbeddingBackend for NgramEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.calls.hit();
        if text.trim().is_empty() {
            return Err(BackendError::failure(
                BackendSlot::Embedding,
                "cannot embed empty text",
            ));
        }
        normalize(self.counts(text)).ok_or_else(|| {
            BackendError::failure(BackendSlot::Embedding, "text too short to embed")
        })
    }
}

pub const DEFAULT_FALLBACK_REASON: &str =
    "the answer makes claims that are not supported by the context";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissPolicy {
    Fallback(String),
    Fail,
}

/// Reasoning mock keyed by the hallucinated answer text.
#[derive(Debug)]
pub struct ScriptedReasoning {
    table: HashMap<String, String>,
    on_miss: MissPolicy,
    calls: CallCounter,
}

impl Default for ScriptedReasoning {
    fn default() -> Self {
        ScriptedReasoning::new(MissPolicy::Fallback(DEFAULT_FALLBACK_REASON.to_string()))
    }
}

impl ScriptedReasoning {
    pub fn new(on_miss: MissPolicy) -> Self {
        ScriptedReasoning {
            table: HashMap::new(),
            on_miss,
            calls: CallCounter::default(),
        }
    }

    pub fn with_entry(mut self, answer: impl Into<String>, reason: impl Into<String>) -> Self {
        self.table.insert(answer.into(), reason.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl ReasoningBackend for ScriptedReasoning {
    fn explain(&self, _question: &str, _context: &str, answer: &str) -> Result<String, BackendError> {
        self.calls.hit();
        match (self.table.get(answer), &self.on_miss) {
            (Some(reason), _) => Ok(reason.clone()),
            (None, MissPolicy::Fallback(reason)) => Ok(reason.clone()),
            (None, MissPolicy::Fail) => Err(BackendError::failure(
                BackendSlot::Reasoning,
                "no scripted explanation for answer",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixingFallback {
    /// Return the hallucinated answer from the repair prompt unchanged.
    Echo,
    Fixed(String),
    Fail,
}

#[derive(Debug)]
pub struct ScriptedFixing {
    rules: Vec<(PromptMatcher, String)>,
    fallback: FixingFallback,
    calls: CallCounter,
}

impl ScriptedFixing {
    pub fn new(fallback: FixingFallback) -> Self {
        ScriptedFixing {
            rules: Vec::new(),
            fallback,
            calls: CallCounter::default(),
        }
    }

    pub fn echo() -> Self {
        Self::new(FixingFallback::Echo)
    }

    pub fn with_rule(mut self, matcher: PromptMatcher, completion: impl Into<String>) -> Self {
        self.rules.push((matcher, completion.into()));
        self
    }

    pub fn with_contains(self, needle: impl Into<String>, completion: impl Into<String>) -> Self {
        self.with_rule(PromptMatcher::Contains(needle.into()), completion)
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl FixingBackend for ScriptedFixing {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.calls.hit();
        if let Some((_, completion)) = self.rules.iter().find(|(m, _)| m.matches(prompt)) {
            return Ok(completion.clone());
        }
        match &self.fallback {
            FixingFallback::Echo => crate::repairer::answer_field(prompt)
                .map(str::to_string)
                .ok_or_else(|| {
                    BackendError::failure(BackendSlot::Fixing, "prompt has no #Answer# field")
                }),
            FixingFallback::Fixed(s) => Ok(s.clone()),
            FixingFallback::Fail => Err(BackendError::failure(
                BackendSlot::Fixing,
                "no scripted completion for prompt",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repairer::{build_repair_prompt, RepairRequest};

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn keyword_moderation_scores() {
        let m = KeywordModeration::new().with_rule("attack", 1.0);
        assert_eq!(m.classify("how to ATTACK").unwrap(), 1.0);
        assert_eq!(m.classify("a benign question").unwrap(), 0.0);
        assert_eq!(m.calls(), 2);
    }

    #[test]
    fn scripted_generation_matches_rules_in_order() {
        let g = ScriptedGeneration::new(GenerationScript::text("fallback"))
            .with_exact("p1", GenerationScript::probs("Yes", &[("Yes", 0.8), ("No", 0.2)]))
            .with_contains("p", GenerationScript::text("second"));
        let out = g.generate("p1", 10).unwrap();
        let c = out.first_token_distribution.candidates();
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].surface.as_str(), c[0].prob), ("Yes", 0.8));
        assert_eq!(g.generate("p2", 10).unwrap().text, "second");
        assert_eq!(g.generate("zzz", 10).unwrap().text, "fallback");
    }

    #[test]
    fn scripted_generation_by_hash() {
        let h = fnv1a64(b"hashed prompt");
        let g = ScriptedGeneration::failing()
            .with_rule(PromptMatcher::Hash(h), GenerationScript::probs("Yes", &[("Yes", 0.8), ("No", 0.2)]));
        assert_eq!(g.generate("hashed prompt", 5).unwrap().text, "Yes");
        assert!(g.generate("other", 5).is_err());
    }

    #[test]
    fn logits_are_softmaxed() {
        let g = ScriptedGeneration::new(GenerationScript::logits("Yes", &[("Yes", 2.0), ("No", 0.0)]));
        let out = g.generate("x", 10).unwrap();
        let c = out.first_token_distribution.candidates();
        assert!((c[0].prob - 0.8808).abs() < 1e-4);
        assert!((c[1].prob - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn top_k_one_truncates() {
        let g = ScriptedGeneration::new(GenerationScript::probs(
            "Yes",
            &[("No", 0.2), ("Yes", 0.8)],
        ));
        let out = g.generate("x", 1).unwrap();
        assert_eq!(out.first_token_distribution.candidates().len(), 1);
        assert_eq!(out.first_token_distribution.candidates()[0].surface, "Yes");
    }

    #[test]
    fn echo_returns_context_blocks() {
        let g = ScriptedGeneration::echo();
        let out = g
            .generate("#Context#: Paris is in France.\nIt is big.\n#Question#: Where is Paris?", 3)
            .unwrap();
        assert_eq!(out.text, "Paris is in France.\nIt is big.");
        assert_eq!(out.first_token_distribution.candidates()[0].surface, "Paris");
        assert_eq!(g.generate("#Question#: hi", 3).unwrap().text, "hi");
    }

    #[test]
    fn embedder_is_deterministic_and_normalized() {
        let e = NgramEmbedder::default();
        let a = e.embed("The quick brown fox").unwrap();
        let b = e.embed("The quick brown fox").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 256);
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(e.embed("   ").is_err());
        assert!(e.embed("a").is_ok());
    }

    #[test]
    fn embedder_separates_short_strings() {
        let e = NgramEmbedder::default();
        let words = ["cat", "act", "tac", "dog", "god", "a", "b", "ab", "ba", "abc", "cab"];
        for (i, x) in words.iter().enumerate() {
            for y in &words[i + 1..] {
                assert_ne!(e.embed(x).unwrap(), e.embed(y).unwrap(), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn reasoning_table_and_fallback() {
        let r = ScriptedReasoning::default().with_entry("Lyon", "Paris is the capital");
        assert_eq!(r.explain("q", "c", "Lyon").unwrap(), "Paris is the capital");
        assert_eq!(r.explain("q", "c", "Nice").unwrap(), DEFAULT_FALLBACK_REASON);
        let strict = ScriptedReasoning::new(MissPolicy::Fail);
        assert!(strict.explain("q", "c", "Nice").is_err());
        assert_eq!(r.calls(), 2);
    }

    #[test]
    fn fixing_echo_returns_answer_field() {
        let f = ScriptedFixing::echo();
        let prompt = build_repair_prompt(&RepairRequest::new("q", "c", "Lyon", "wrong city"));
        assert_eq!(f.complete(&prompt).unwrap(), "Lyon");
        let f = ScriptedFixing::echo().with_contains("wrong city", "Paris");
        assert_eq!(f.complete(&prompt).unwrap(), "Paris");
    }
}
