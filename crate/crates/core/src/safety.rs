//! Unsafe-input classification and hallucination scoring.
//!
//! Hallucination detection asks a detector model whether an answer is
//! hallucinated and reads the probability mass of its *first* token. Among
//! the top-k first-token candidates, the mass on "yes" surfaces against the
//! mass on "no" surfaces gives
//!
//! ```text
//! p_halu = sum(P(yes tokens)) / (sum(P(yes tokens)) + sum(P(no tokens)))
//! ```
//!
//! which is thresholded with `>=`. When neither set appears among the
//! candidates the ratio is undefined and [`PHalu::Indeterminate`] is returned;
//! the pipeline policy decides how to resolve it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, GenerationBackend, ModerationBackend};
use crate::dataprep::render_detection_prompt;
use crate::pipeline::{IndeterminateAction, PipelinePolicy};

/// Default probability at or above which an input is classified unsafe.
pub const DEFAULT_INPUT_UNSAFE_THRESHOLD: f64 = 0.5;

/// Reason attached to a hallucination verdict that came from an
/// indeterminate score rather than an explicit "yes".
pub const INDETERMINATE_REASON: &str =
    "indeterminate: no yes/no token among the detector's top first-token candidates";

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{len} candidates exceed k = {k}")]
    TooManyCandidates { len: usize, k: usize },
    #[error("candidate `{surface}` has probability {prob} outside [0, 1]")]
    ProbabilityOutOfRange { surface: String, prob: f64 },
    #[error("candidate probabilities are not in descending order at position {0}")]
    NotDescending(usize),
    #[error("candidate probabilities sum to {0}, above 1")]
    MassExceedsOne(f64),
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("moderation backend returned score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("generation backend returned an invalid distribution: {0}")]
    InvalidDistribution(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyLabel {
    Safe,
    Unsafe,
}

/// Binary verdict on a user input. `score` is the probability of unsafe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub label: SafetyLabel,
    pub score: f64,
}

impl SafetyVerdict {
    pub fn from_score(score: f64, threshold: f64) -> Self {
        let label = if score >= threshold {
            SafetyLabel::Unsafe
        } else {
            SafetyLabel::Safe
        };
        SafetyVerdict { label, score }
    }

    pub fn is_unsafe(&self) -> bool {
        self.label == SafetyLabel::Unsafe
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCandidate {
    pub token_id: u32,
    pub surface: String,
    pub prob: f64,
}

impl TokenCandidate {
    pub fn new(token_id: u32, surface: impl Into<String>, prob: f64) -> Self {
        TokenCandidate {
            token_id,
            surface: surface.into(),
            prob,
        }
    }
}

/// Top-k first-token candidates in descending probability order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct FirstTokenDistribution {
    candidates: Vec<TokenCandidate>,
    k: usize,
}

#[derive(Deserialize)]
struct RawDistribution {
    candidates: Vec<TokenCandidate>,
    k: usize,
}

impl TryFrom<RawDistribution> for FirstTokenDistribution {
    type Error = DistributionError;

    fn try_from(raw: RawDistribution) -> Result<Self, Self::Error> {
        FirstTokenDistribution::new(raw.candidates, raw.k)
    }
}

impl FirstTokenDistribution {
    /// Validate an already-ranked candidate list.
    pub fn new(candidates: Vec<TokenCandidate>, k: usize) -> Result<Self, DistributionError> {
        if k == 0 {
            return Err(DistributionError::ZeroK);
        }
        if candidates.len() > k {
            return Err(DistributionError::TooManyCandidates {
                len: candidates.len(),
                k,
            });
        }
        for c in &candidates {
            if !(0.0..=1.0).contains(&c.prob) {
                return Err(DistributionError::ProbabilityOutOfRange {
                    surface: c.surface.clone(),
                    prob: c.prob,
                });
            }
        }
        if let Some(i) = candidates.windows(2).position(|w| w[1].prob > w[0].prob) {
            return Err(DistributionError::NotDescending(i + 1));
        }
        let total: f64 = candidates.iter().map(|c| c.prob).sum();
        if total > 1.0 + SUM_TOLERANCE {
            return Err(DistributionError::MassExceedsOne(total));
        }
        Ok(FirstTokenDistribution { candidates, k })
    }

    /// Rank arbitrary candidates by probability (stable on ties) and keep
    /// the top `k`.
    pub fn top_k(mut candidates: Vec<TokenCandidate>, k: usize) -> Result<Self, DistributionError> {
        candidates.sort_by(|a, b| b.prob.total_cmp(&a.prob));
        candidates.truncate(k);
        Self::new(candidates, k)
    }

    /// Softmax over the full vocabulary of `logits`, then keep the top `k`.
    pub fn from_logits(logits: &[(String, f64)], k: usize) -> Result<Self, DistributionError> {
        let values: Vec<f64> = logits.iter().map(|(_, l)| *l).collect();
        let probs = crate::backends::softmax(&values);
        let candidates = logits
            .iter()
            .zip(probs)
            .enumerate()
            .map(|(i, ((surface, _), p))| TokenCandidate::new(i as u32, surface.clone(), p))
            .collect();
        Self::top_k(candidates, k)
    }

    pub fn candidates(&self) -> &[TokenCandidate] {
        &self.candidates
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenSetError {
    #[error("yes and no token sets must both be non-empty")]
    Empty,
    #[error("token `{0}` appears in both the yes and no sets")]
    Overlap(String),
}

/// Token surfaces that count as "yes" and "no" answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTokenSets")]
pub struct YesNoTokenSets {
    yes_tokens: BTreeSet<String>,
    no_tokens: BTreeSet<String>,
}

#[derive(Deserialize)]
struct RawTokenSets {
    yes_tokens: BTreeSet<String>,
    no_tokens: BTreeSet<String>,
}

impl TryFrom<RawTokenSets> for YesNoTokenSets {
    type Error = TokenSetError;

    fn try_from(raw: RawTokenSets) -> Result<Self, Self::Error> {
        YesNoTokenSets::new(raw.yes_tokens, raw.no_tokens)
    }
}

impl Default for YesNoTokenSets {
    fn default() -> Self {
        YesNoTokenSets::new(
            ["Yes", "yes", " Yes", " yes"],
            ["No", "no", " No", " no"],
        )
        .expect("default token sets are valid")
    }
}

impl YesNoTokenSets {
    pub fn new<Y, N>(yes: Y, no: N) -> Result<Self, TokenSetError>
    where
        Y: IntoIterator,
        Y::Item: Into<String>,
        N: IntoIterator,
        N::Item: Into<String>,
    {
        let yes_tokens: BTreeSet<String> = yes.into_iter().map(Into::into).collect();
        let no_tokens: BTreeSet<String> = no.into_iter().map(Into::into).collect();
        if yes_tokens.is_empty() || no_tokens.is_empty() {
            return Err(TokenSetError::Empty);
        }
        if let Some(shared) = yes_tokens.intersection(&no_tokens).next() {
            return Err(TokenSetError::Overlap(shared.clone()));
        }
        Ok(YesNoTokenSets {
            yes_tokens,
            no_tokens,
        })
    }

    pub fn yes_tokens(&self) -> &BTreeSet<String> {
        &self.yes_tokens
    }

    pub fn no_tokens(&self) -> &BTreeSet<String> {
        &self.no_tokens
    }

    /// The same sets with the roles of yes and no exchanged.
    pub fn swapped(&self) -> Self {
        YesNoTokenSets {
            yes_tokens: self.no_tokens.clone(),
            no_tokens: self.yes_tokens.clone(),
        }
    }
}

/// Hallucination probability, or the 0/0 case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PHalu {
    Probability(f64),
    Indeterminate,
}

impl PHalu {
    pub fn value(self) -> Option<f64> {
        match self {
            PHalu::Probability(p) => Some(p),
            PHalu::Indeterminate => None,
        }
    }
}

/// Ratio of yes-mass to yes+no mass over the candidate list.
pub fn compute_p_halu(dist: &FirstTokenDistribution, sets: &YesNoTokenSets) -> PHalu {
    let mut yes = 0.0;
    let mut no = 0.0;
    for c in dist.candidates() {
        if sets.yes_tokens.contains(&c.surface) {
            yes += c.prob;
        } else if sets.no_tokens.contains(&c.surface) {
            no += c.prob;
        }
    }
    let total = yes + no;
    if total <= 0.0 {
        PHalu::Indeterminate
    } else {
        PHalu::Probability(yes / total)
    }
}

/// Verdict of the hallucination detector for one (question, context, answer).
///
/// `is_hallucinated == (p_halu >= threshold)` for determinate scores. When
/// `indeterminate` is set the verdict comes from the policy and `p_halu` is
/// pinned to 1.0 (treated hallucinated) or 0.0 (treated safe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationAssessment {
    pub p_halu: f64,
    pub is_hallucinated: bool,
    pub reason: String,
    #[serde(default)]
    pub indeterminate: bool,
}

/// Classify a user input through the moderation backend.
pub fn check_input(
    backend: &dyn ModerationBackend,
    text: &str,
    threshold: f64,
) -> Result<SafetyVerdict, DetectorError> {
    let score = backend.classify(text)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(DetectorError::InvalidScore(score));
    }
    Ok(SafetyVerdict::from_score(score, threshold))
}

/// Score an answer for hallucination with the detector prompt.
pub fn detect_hallucination(
    backend: &dyn GenerationBackend,
    question: &str,
    context: &str,
    answer: &str,
    policy: &PipelinePolicy,
    sets: &YesNoTokenSets,
) -> Result<HallucinationAssessment, DetectorError> {
    let prompt = render_detection_prompt(question, context, answer);
    let output = backend.generate(&prompt, policy.top_k_tokens)?;
    let dist = output.first_token_distribution;
    // Backends may return more than requested; only the top k count.
    let dist = if dist.candidates().len() > policy.top_k_tokens {
        FirstTokenDistribution::top_k(dist.candidates().to_vec(), policy.top_k_tokens)?
    } else {
        dist
    };

    let assessment = match compute_p_halu(&dist, sets) {
        PHalu::Probability(p) => {
            let is_hallucinated = p >= policy.halu_threshold;
            let reason = if is_hallucinated {
                extract_reason(&output.text, sets)
            } else {
                String::new()
            };
            HallucinationAssessment {
                p_halu: p,
                is_hallucinated,
                reason,
                indeterminate: false,
            }
        }
        PHalu::Indeterminate => match policy.indeterminate_hallucination_action {
            IndeterminateAction::TreatHallucinated => HallucinationAssessment {
                p_halu: 1.0,
                is_hallucinated: true,
                reason: INDETERMINATE_REASON.to_string(),
                indeterminate: true,
            },
            IndeterminateAction::TreatSafe => HallucinationAssessment {
                p_halu: 0.0,
                is_hallucinated: false,
                reason: String::new(),
                indeterminate: true,
            },
        },
    };
    Ok(assessment)
}

/// Strip the leading yes-marker and one following comma and space from the
/// detector continuation ("Yes, <reason>" -> "<reason>").
pub fn extract_reason(continuation: &str, sets: &YesNoTokenSets) -> String {
    let text = continuation.trim_start();
    let mut markers: Vec<&str> = sets
        .yes_tokens
        .iter()
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .collect();
    markers.sort_by_key(|m| std::cmp::Reverse(m.len()));

    for marker in markers {
        if let Some(rest) = text.strip_prefix(marker) {
            if rest.chars().next().is_some_and(char::is_alphanumeric) {
                continue;
            }
            let rest = rest.strip_prefix(',').unwrap_or(rest);
            let rest = rest.strip_prefix(' ').unwrap_or(rest);
            return rest.trim().to_string();
        }
    }
    text.trim().to_string()
}
