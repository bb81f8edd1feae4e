//! Vector grounding: index a knowledge corpus, retrieve the top-k records
//! for a query, and measure retrieval quality with the top-k callback rate.
//!
//! Two indexing strategies are supported. [`IndexStrategy::WholeKnowledge`]
//! embeds each record's full text; [`IndexStrategy::KeyInformation`] embeds
//! only its key field (for QA data, the question). Search is exact: every
//! entry is scored by cosine similarity and ties are broken by ascending
//! record id, so results are a deterministic total order.

mod experiment;

pub use experiment::{
    run_callback_experiment, write_callback_csv, CallbackRow, ExperimentConfig, QueryMode,
    Rephraser, SyntheticRephraser,
};

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{normalize, BackendError, EmbeddingBackend};

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("index is empty")]
    EmptyIndex,
    #[error("record `{0}` has no key_text, required by the key_information strategy")]
    MissingKeyText(String),
    #[error("record id `{0}` appears more than once")]
    DuplicateRecordId(String),
    #[error("record `{id}` is invalid: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("unknown record id `{0}`")]
    UnknownRecordId(String),
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding has dimension {got}, index uses {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding of `{0}` has zero norm")]
    ZeroVector(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_text: Option<String>,
}

impl KnowledgeRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        KnowledgeRecord {
            id: id.into(),
            text: text.into(),
            key_text: None,
        }
    }

    pub fn with_key(mut self, key_text: impl Into<String>) -> Self {
        self.key_text = Some(key_text.into());
        self
    }

    fn validate(&self) -> Result<(), GroundingError> {
        let invalid = |message: &str| GroundingError::InvalidRecord {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("id is empty"));
        }
        if self.text.trim().is_empty() {
            return Err(invalid("text is empty"));
        }
        if self.key_text.as_deref().is_some_and(|k| k.trim().is_empty()) {
            return Err(invalid("key_text is present but empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexStrategy {
    WholeKnowledge,
    KeyInformation,
}

impl IndexStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexStrategy::WholeKnowledge => "whole_knowledge",
            IndexStrategy::KeyInformation => "key_information",
        }
    }

    /// The text of `record` this strategy embeds.
    pub fn indexed_text(self, record: &KnowledgeRecord) -> Result<&str, GroundingError> {
        match self {
            IndexStrategy::WholeKnowledge => Ok(&record.text),
            IndexStrategy::KeyInformation => record
                .key_text
                .as_deref()
                .ok_or_else(|| GroundingError::MissingKeyText(record.id.clone())),
        }
    }
}

impl fmt::Display for IndexStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whole_knowledge" => Ok(IndexStrategy::WholeKnowledge),
            "key_information" => Ok(IndexStrategy::KeyInformation),
            other => Err(format!(
                "unknown index strategy `{other}` (expected whole_knowledge or key_information)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub record: KnowledgeRecord,
    pub vector: Vec<f64>,
}

/// Immutable exact-search index. One unit vector per record.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    strategy: IndexStrategy,
    dim: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub record: KnowledgeRecord,
    pub similarity: f64,
}

/// A query together with the retrieved context blocks, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedQuery {
    pub query_text: String,
    pub contexts: Vec<RetrievalResult>,
}

impl GroundedQuery {
    /// Context blocks joined by newlines.
    pub fn context_text(&self) -> String {
        self.contexts
            .iter()
            .map(|r| r.record.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// `#Context#: <block_1>\n...\n#Question#: <query_text>`.
    pub fn prompt(&self) -> String {
        format!("#Context#: {}\n#Question#: {}", self.context_text(), self.query_text)
    }
}

/// A query paired with the id of the record it should retrieve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query_text: String,
    pub relevant_record_id: String,
}

fn embed_unit(embedder: &dyn EmbeddingBackend, text: &str) -> Result<Vec<f64>, GroundingError> {
    let v = embedder.embed(text)?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE {
        return Ok(v);
    }
    normalize(v).ok_or_else(|| GroundingError::ZeroVector(text.to_string()))
}

pub fn build_index(
    corpus: &[KnowledgeRecord],
    strategy: IndexStrategy,
    embedder: &dyn EmbeddingBackend,
) -> Result<VectorIndex, GroundingError> {
    if corpus.is_empty() {
        return Err(GroundingError::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(corpus.len());
    for record in corpus {
        record.validate()?;
        if !seen.insert(record.id.as_str()) {
            return Err(GroundingError::DuplicateRecordId(record.id.clone()));
        }
        strategy.indexed_text(record)?;
    }

    let mut entries = Vec::with_capacity(corpus.len());
    let mut dim = None;
    for record in corpus {
        let vector = embed_unit(embedder, strategy.indexed_text(record)?)?;
        let expected = *dim.get_or_insert(vector.len());
        if vector.len() != expected {
            return Err(GroundingError::DimensionMismatch {
                expected,
                got: vector.len(),
            });
        }
        entries.push(IndexEntry {
            record: record.clone(),
            vector,
        });
    }
    Ok(VectorIndex {
        strategy,
        dim: dim.unwrap_or(0),
        entries,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rank_order(a: &RetrievalResult, b: &RetrievalResult) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.record.id.cmp(&b.record.id))
}

impl VectorIndex {
    pub fn strategy(&self) -> IndexStrategy {
        self.strategy
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.entries.iter().any(|e| e.record.id == record_id)
    }

    /// Rank every entry against an already-embedded query and keep `k`.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<RetrievalResult>, GroundingError> {
        if self.entries.is_empty() {
            return Err(GroundingError::EmptyIndex);
        }
        if k == 0 {
            return Err(GroundingError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(GroundingError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut hits: Vec<RetrievalResult> = self
            .entries
            .iter()
            .map(|e| RetrievalResult {
                record: e.record.clone(),
                similarity: dot(&e.vector, query).clamp(-1.0, 1.0),
            })
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(k);
        Ok(hits)
    }
}

pub fn retrieve(
    index: &VectorIndex,
    query_text: &str,
    k: usize,
    embedder: &dyn EmbeddingBackend,
) -> Result<Vec<RetrievalResult>, GroundingError> {
    if index.is_empty() {
        return Err(GroundingError::EmptyIndex);
    }
    if k == 0 {
        return Err(GroundingError::ZeroK);
    }
    let query = embed_unit(embedder, query_text)?;
    index.search(&query, k)
}

pub fn ground_query(
    query_text: &str,
    index: &VectorIndex,
    k: usize,
    embedder: &dyn EmbeddingBackend,
) -> Result<GroundedQuery, GroundingError> {
    Ok(GroundedQuery {
        query_text: query_text.to_string(),
        contexts: retrieve(index, query_text, k, embedder)?,
    })
}

/// Fraction of queries whose relevant record is among the top-k results.
pub fn callback(
    index: &VectorIndex,
    queries: &[LabeledQuery],
    k: usize,
    embedder: &dyn EmbeddingBackend,
) -> Result<f64, GroundingError> {
    if queries.is_empty() {
        return Err(GroundingError::EmptyQuerySet);
    }
    if let Some(q) = queries.iter().find(|q| !index.contains(&q.relevant_record_id)) {
        return Err(GroundingError::UnknownRecordId(q.relevant_record_id.clone()));
    }
    let mut hits = 0usize;
    for q in queries {
        let results = retrieve(index, &q.query_text, k, embedder)?;
        if results.iter().any(|r| r.record.id == q.relevant_record_id) {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// Load a corpus of `{"id","text","key_text"?}` JSON lines.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<KnowledgeRecord>, GroundingError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: KnowledgeRecord = serde_json::from_str(&line).map_err(|e| GroundingError::Corpus {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_corpus(path: &std::path::Path) -> Result<Vec<KnowledgeRecord>, GroundingError> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::NgramEmbedder;

    fn corpus() -> Vec<KnowledgeRecord> {
        vec![
            KnowledgeRecord::new("r1", "Q: How do I reset my password? A: Use the account settings page.")
                .with_key("How do I reset my password?"),
            KnowledgeRecord::new("r2", "Q: Where is my order? A: Check the tracking link in your email.")
                .with_key("Where is my order?"),
            KnowledgeRecord::new("r3", "Q: Can I return shoes? A: Returns are accepted within 30 days.")
                .with_key("Can I return shoes?"),
        ]
    }

    #[test]
    fn key_information_indexes_key_text() {
        let e = NgramEmbedder::default();
        let idx = build_index(&corpus(), IndexStrategy::KeyInformation, &e).unwrap();
        assert_eq!(idx.len(), 3);
        for entry in idx.entries() {
            let norm = entry.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
            assert_eq!(entry.vector, e.embed(entry.record.key_text.as_deref().unwrap()).unwrap());
        }
    }

    #[test]
    fn strategies_produce_different_vectors() {
        let e = NgramEmbedder::default();
        let key = build_index(&corpus(), IndexStrategy::KeyInformation, &e).unwrap();
        let whole = build_index(&corpus(), IndexStrategy::WholeKnowledge, &e).unwrap();
        assert_eq!(whole.len(), key.len());
        for (a, b) in key.entries().iter().zip(whole.entries()) {
            assert_ne!(a.vector, b.vector);
        }
    }

    #[test]
    fn build_errors() {
        let e = NgramEmbedder::default();
        let mut c = corpus();
        c[1].key_text = None;
        assert!(matches!(
            build_index(&c, IndexStrategy::KeyInformation, &e),
            Err(GroundingError::MissingKeyText(id)) if id == "r2"
        ));
        assert!(build_index(&c, IndexStrategy::WholeKnowledge, &e).is_ok());
        assert!(matches!(
            build_index(&[], IndexStrategy::WholeKnowledge, &e),
            Err(GroundingError::EmptyCorpus)
        ));
        let mut dup = corpus();
        dup[2].id = "r1".into();
        assert!(matches!(
            build_index(&dup, IndexStrategy::WholeKnowledge, &e),
            Err(GroundingError::DuplicateRecordId(_))
        ));
        let mut blank = corpus();
        blank[0].key_text = Some(" ".into());
        assert!(matches!(
            build_index(&blank, IndexStrategy::WholeKnowledge, &e),
            Err(GroundingError::InvalidRecord { .. })
        ));
    }

    #[test]
    fn self_query_ranks_first() {
        let e = NgramEmbedder::default();
        let idx = build_index(&corpus(), IndexStrategy::KeyInformation, &e).unwrap();
        let hits = retrieve(&idx, "Where is my order?", 3, &e).unwrap();
        assert_eq!(hits[0].record.id, "r2");
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k_is_clamped_and_zero_rejected() {
        let e = NgramEmbedder::default();
        let idx = build_index(&corpus(), IndexStrategy::WholeKnowledge, &e).unwrap();
        assert_eq!(retrieve(&idx, "shoes", 50, &e).unwrap().len(), 3);
        assert!(matches!(retrieve(&idx, "shoes", 0, &e), Err(GroundingError::ZeroK)));
    }

    #[test]
    fn ties_break_by_id() {
        let e = NgramEmbedder::default();
        let c = vec![
            KnowledgeRecord::new("b", "same text"),
            KnowledgeRecord::new("a", "same text"),
            KnowledgeRecord::new("c", "other words entirely"),
        ];
        let idx = build_index(&c, IndexStrategy::WholeKnowledge, &e).unwrap();
        let hits = retrieve(&idx, "same text", 3, &e).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.record.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn grounded_prompt_layout() {
        let e = NgramEmbedder::default();
        let idx = build_index(&corpus(), IndexStrategy::KeyInformation, &e).unwrap();
        let g = ground_query("Where is my order?", &idx, 1, &e).unwrap();
        assert_eq!(g.contexts.len(), 1);
        assert_eq!(
            g.prompt(),
            "#Context#: Q: Where is my order? A: Check the tracking link in your email.\n#Question#: Where is my order?"
        );
        let two = &corpus()[..2];
        let idx = build_index(two, IndexStrategy::KeyInformation, &e).unwrap();
        let g = ground_query("Where is my order?", &idx, 3, &e).unwrap();
        assert_eq!(g.contexts.len(), 2);
        assert_eq!(g.prompt().lines().count(), 3);
    }

    #[test]
    fn callback_values() {
        let e = NgramEmbedder::default();
        let idx = build_index(&corpus(), IndexStrategy::KeyInformation, &e).unwrap();
        let self_queries: Vec<_> = corpus()
            .iter()
            .map(|r| LabeledQuery {
                query_text: r.key_text.clone().unwrap(),
                relevant_record_id: r.id.clone(),
            })
            .collect();
        assert_eq!(callback(&idx, &self_queries, 1, &e).unwrap(), 1.0);
        assert!(matches!(callback(&idx, &[], 1, &e), Err(GroundingError::EmptyQuerySet)));
        let unknown = [LabeledQuery {
            query_text: "x".into(),
            relevant_record_id: "nope".into(),
        }];
        assert!(matches!(
            callback(&idx, &unknown, 1, &e),
            Err(GroundingError::UnknownRecordId(_))
        ));
        let misdirected: Vec<_> = self_queries
            .iter()
            .map(|q| LabeledQuery {
                query_text: "completely unrelated zebra".into(),
                ..q.clone()
            })
            .collect();
        assert_eq!(callback(&idx, &misdirected, 3, &e).unwrap(), 1.0);
    }

    #[test]
    fn corpus_jsonl() {
        let data = "{\"id\":\"a\",\"text\":\"t\",\"key_text\":\"k\"}\n{\"id\":\"b\",\"text\":\"u\"}\n";
        let c = read_corpus(data.as_bytes()).unwrap();
        assert_eq!(c[0].key_text.as_deref(), Some("k"));
        assert_eq!(c[1].key_text, None);
        assert!(matches!(
            read_corpus("{\"id\":1}".as_bytes()),
            Err(GroundingError::Corpus { line: 1, .. })
        ));
    }
}
