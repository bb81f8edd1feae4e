//! Model-call contracts for the five backend slots.
//!
//! Every model the pipeline touches sits behind one of these traits:
//! moderation (input classifier), generation (answering model and
//! hallucination detector), embedding (retrieval), reasoning (explanations
//! for training data) and fixing (answer repair). [`BackendRegistry`] holds at
//! most one handle per slot; the [`mock`] module ships deterministic scripted
//! implementations and [`http`] a JSON-over-HTTP adapter for real servers.

pub mod http;
pub mod mock;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::safety::FirstTokenDistribution;

/// Name of a pluggable backend slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSlot {
    Moderation,
    Generation,
    Embedding,
    Reasoning,
    Fixing,
}

impl BackendSlot {
    pub const ALL: [BackendSlot; 5] = [
        BackendSlot::Moderation,
        BackendSlot::Generation,
        BackendSlot::Embedding,
        BackendSlot::Reasoning,
        BackendSlot::Fixing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendSlot::Moderation => "moderation",
            BackendSlot::Generation => "generation",
            BackendSlot::Embedding => "embedding",
            BackendSlot::Reasoning => "reasoning",
            BackendSlot::Fixing => "fixing",
        }
    }
}

impl fmt::Display for BackendSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendSlot {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackendSlot::ALL
            .into_iter()
            .find(|slot| slot.as_str() == s)
            .ok_or_else(|| RegistryError::UnknownSlot(s.to_string()))
    }
}

/// Failure of a backend call.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("no backend registered for slot `{0}`")]
    Unavailable(BackendSlot),
    #[error("{slot} backend failed: {message}")]
    Failure { slot: BackendSlot, message: String },
}

impl BackendError {
    pub fn failure(slot: BackendSlot, message: impl Into<String>) -> Self {
        BackendError::Failure {
            slot,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("unknown backend slot `{0}` (expected one of moderation, generation, embedding, reasoning, fixing)")]
    UnknownSlot(String),
    #[error("cannot register a {handle} backend in the `{slot}` slot")]
    SlotMismatch {
        slot: BackendSlot,
        handle: BackendSlot,
    },
}

/// Text plus the top-k distribution over the first generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub text: String,
    pub first_token_distribution: FirstTokenDistribution,
}

/// Binary input classifier. Returns the probability that `text` is unsafe.
pub trait ModerationBackend: Send + Sync {
    fn classify(&self, text: &str) -> Result<f64, BackendError>;
}

/// Text generation with access to the first-token distribution.
///
/// Implementations report normalized probabilities; if the underlying model
/// exposes raw logits the adapter applies [`softmax`] before truncating to
/// `top_k` candidates.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, prompt: &str, top_k: usize) -> Result<GenerationOutput, BackendError>;
}

/// Maps text to a fixed-dimension vector with unit L2 norm.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// Produces an explanation of why an answer is hallucinated.
pub trait ReasoningBackend: Send + Sync {
    fn explain(&self, question: &str, context: &str, answer: &str) -> Result<String, BackendError>;
}

/// Plain prompt completion used to rewrite hallucinated answers.
pub trait FixingBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// A backend handle tagged with the slot it implements.
#[derive(Clone)]
pub enum BackendHandle {
    Moderation(Arc<dyn ModerationBackend>),
    Generation(Arc<dyn GenerationBackend>),
    Embedding(Arc<dyn EmbeddingBackend>),
    Reasoning(Arc<dyn ReasoningBackend>),
    Fixing(Arc<dyn FixingBackend>),
}

impl BackendHandle {
    pub fn slot(&self) -> BackendSlot {
        match self {
            BackendHandle::Moderation(_) => BackendSlot::Moderation,
            BackendHandle::Generation(_) => BackendSlot::Generation,
            BackendHandle::Embedding(_) => BackendSlot::Embedding,
            BackendHandle::Reasoning(_) => BackendSlot::Reasoning,
            BackendHandle::Fixing(_) => BackendSlot::Fixing,
        }
    }
}

impl fmt::Debug for BackendHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BackendHandle({})", self.slot())
    }
}

/// One optional backend per slot. Re-registration replaces the previous handle.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    moderation: Option<Arc<dyn ModerationBackend>>,
    generation: Option<Arc<dyn GenerationBackend>>,
    embedding: Option<Arc<dyn EmbeddingBackend>>,
    reasoning: Option<Arc<dyn ReasoningBackend>>,
    fixing: Option<Arc<dyn FixingBackend>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register `backend` under the slot named `slot`.
    pub fn register(&mut self, slot: &str, backend: BackendHandle) -> Result<(), RegistryError> {
        let slot: BackendSlot = slot.parse()?;
        if backend.slot() != slot {
            return Err(RegistryError::SlotMismatch {
                slot,
                handle: backend.slot(),
            });
        }
        self.insert(backend);
        Ok(())
    }

    /// Register a handle in the slot it declares.
    pub fn insert(&mut self, backend: BackendHandle) {
        match backend {
            BackendHandle::Moderation(b) => self.moderation = Some(b),
            BackendHandle::Generation(b) => self.generation = Some(b),
            BackendHandle::Embedding(b) => self.embedding = Some(b),
            BackendHandle::Reasoning(b) => self.reasoning = Some(b),
            BackendHandle::Fixing(b) => self.fixing = Some(b),
        }
    }

    pub fn is_registered(&self, slot: BackendSlot) -> bool {
        match slot {
            BackendSlot::Moderation => self.moderation.is_some(),
            BackendSlot::Generation => self.generation.is_some(),
            BackendSlot::Embedding => self.embedding.is_some(),
            BackendSlot::Reasoning => self.reasoning.is_some(),
            BackendSlot::Fixing => self.fixing.is_some(),
        }
    }

    pub fn moderation(&self) -> Result<&dyn ModerationBackend, BackendError> {
        self.moderation
            .as_deref()
            .ok_or(BackendError::Unavailable(BackendSlot::Moderation))
    }

    pub fn generation(&self) -> Result<&dyn GenerationBackend, BackendError> {
        self.generation
            .as_deref()
            .ok_or(BackendError::Unavailable(BackendSlot::Generation))
    }

    pub fn embedding(&self) -> Result<&dyn EmbeddingBackend, BackendError> {
        self.embedding
            .as_deref()
            .ok_or(BackendError::Unavailable(BackendSlot::Embedding))
    }

    pub fn reasoning(&self) -> Result<&dyn ReasoningBackend, BackendError> {
        self.reasoning
            .as_deref()
            .ok_or(BackendError::Unavailable(BackendSlot::Reasoning))
    }

    pub fn fixing(&self) -> Result<&dyn FixingBackend, BackendError> {
        self.fixing
            .as_deref()
            .ok_or(BackendError::Unavailable(BackendSlot::Fixing))
    }
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let registered: Vec<_> = BackendSlot::ALL
            .into_iter()
            .filter(|s| self.is_registered(*s))
            .collect();
        f.debug_struct("BackendRegistry")
            .field("registered", &registered)
            .finish()
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Scale `v` to unit L2 norm. Returns `None` for a zero or non-finite vector.
pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}
