use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_index, embed_unit, GroundingError, IndexStrategy, KnowledgeRecord};
use crate::backends::mock::fnv1a64;
use crate::backends::EmbeddingBackend;

/// Produces a variant of a user question.
pub trait Rephraser: Send + Sync {
    fn rephrase(&self, text: &str) -> String;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "at", "be", "by", "can", "could", "did", "do", "does", "for", "from",
    "how", "i", "in", "is", "it", "me", "my", "of", "on", "or", "should", "that", "the", "this",
    "to", "was", "were", "what", "will", "with", "would", "you", "your",
];

/// Drops stopwords and swaps a few adjacent words. The perturbation is
/// seeded from `seed` and the input text, so each question always gets the
/// same rephrasing.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticRephraser {
    seed: u64,
}

impl SyntheticRephraser {
    pub fn new(seed: u64) -> Self {
        SyntheticRephraser { seed }
    }
}

impl Rephraser for SyntheticRephraser {
    fn rephrase(&self, text: &str) -> String {
        let all: Vec<&str> = text.split_whitespace().collect();
        let mut words: Vec<&str> = all
            .iter()
            .copied()
            .filter(|w| {
                let bare = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                !STOPWORDS.contains(&bare.as_str())
            })
            .collect();
        if words.is_empty() {
            words = all;
        }
        if words.len() >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a64(text.as_bytes()));
            let swaps = (words.len() / 4).max(1);
            for _ in 0..swaps {
                let i = rng.random_range(0..words.len() - 1);
                words.swap(i, i + 1);
            }
        }
        words.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Original,
    Rephrased,
}

impl QueryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::Original => "original",
            QueryMode::Rephrased => "rephrased",
        }
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(QueryMode::Original),
            "rephrased" => Ok(QueryMode::Rephrased),
            other => Err(format!("unknown query mode `{other}` (expected original or rephrased)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: IndexStrategy,
    pub query_mode: QueryMode,
    pub k_values: Vec<usize>,
    /// Number of questions sampled from the corpus; `None` uses all.
    pub sample_size: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: IndexStrategy::KeyInformation,
            query_mode: QueryMode::Original,
            k_values: vec![1, 3, 5, 10],
            sample_size: Some(50),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallbackRow {
    pub strategy: IndexStrategy,
    pub query_mode: QueryMode,
    pub k: usize,
    pub callback: f64,
}

/// Measure top-k callback for one (strategy, query mode) over questions
/// drawn from the corpus.
///
/// Questions are the records' `key_text`; each is labeled with its own
/// record as the relevant one. Records without a key are not sampled.
pub fn run_callback_experiment(
    corpus: &[KnowledgeRecord],
    config: &ExperimentConfig,
    embedder: &dyn EmbeddingBackend,
    rephraser: &dyn Rephraser,
) -> Result<Vec<CallbackRow>, GroundingError> {
    if config.k_values.contains(&0) {
        return Err(GroundingError::ZeroK);
    }
    let index = build_index(corpus, config.strategy, embedder)?;

    let candidates: Vec<(&str, &str)> = corpus
        .iter()
        .filter_map(|r| r.key_text.as_deref().map(|k| (r.id.as_str(), k)))
        .collect();
    if candidates.is_empty() {
        return Err(GroundingError::EmptyQuerySet);
    }
    let picked: Vec<usize> = match config.sample_size {
        Some(n) if n < candidates.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut v = index::sample(&mut rng, candidates.len(), n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..candidates.len()).collect(),
    };
    if picked.is_empty() {
        return Err(GroundingError::EmptyQuerySet);
    }

    // Rank of each relevant record among all entries; top-k hit iff rank < k.
    let mut ranks = Vec::with_capacity(picked.len());
    for i in picked {
        let (id, question) = candidates[i];
        let query_text = match config.query_mode {
            QueryMode::Original => question.to_string(),
            QueryMode::Rephrased => rephraser.rephrase(question),
        };
        let query = embed_unit(embedder, &query_text)?;
        let ranking = index.search(&query, index.len())?;
        let rank = ranking
            .iter()
            .position(|r| r.record.id == id)
            .expect("relevant record is in the index");
        ranks.push(rank);
    }

    let total = ranks.len() as f64;
    Ok(config
        .k_values
        .iter()
        .map(|&k| CallbackRow {
            strategy: config.strategy,
            query_mode: config.query_mode,
            k,
            callback: ranks.iter().filter(|&&r| r < k).count() as f64 / total,
        })
        .collect())
}

/// CSV with header `strategy,query_mode,k,callback`.
pub fn write_callback_csv<W: Write>(mut w: W, rows: &[CallbackRow]) -> std::io::Result<()> {
    writeln!(w, "strategy,query_mode,k,callback")?;
    for row in rows {
        writeln!(w, "{},{},{},{}", row.strategy, row.query_mode, row.k, row.callback)?;
    }
    w.flush()
}
