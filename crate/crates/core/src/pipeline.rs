//! Request orchestration: input safety, grounding, inference, hallucination
//! detection, customization and repair, in that fixed order.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backends::{BackendHandle, BackendSlot, BackendRegistry, RegistryError};
use crate::customizer::{run_chain, Wrapper, WrapperOutcome};
use crate::grounding::{ground_query, VectorIndex};
use crate::repairer::{build_repair_prompt, repair, RepairRequest};
use crate::safety::{
    check_input, detect_hallucination, SafetyLabel, YesNoTokenSets, DEFAULT_INPUT_UNSAFE_THRESHOLD,
};

pub const DEFAULT_REJECTION_MESSAGE: &str = "Your query was rejected by the safety policy.";

/// Reason handed to the repairer when the detector flagged an answer but
/// produced no explanation.
pub const UNEXPLAINED_REASON: &str = "the detector flagged the answer as hallucinated without an explanation";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("stage {stage} needs the {slot} backend, which is not registered")]
    BackendUnavailable { stage: StageName, slot: BackendSlot },
    #[error("grounding is enabled but no knowledge index is loaded")]
    MissingIndex,
    #[error("stage {stage} failed: {source}")]
    StageFailure {
        stage: StageName,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    fn stage(stage: StageName, source: impl Into<BoxError>) -> Self {
        PipelineError::StageFailure {
            stage,
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Query {
    pub fn new(text: impl Into<String>) -> Self {
        Query {
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.text.trim().is_empty() {
            return Err(PipelineError::InvalidQuery("query text is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsafeInputAction {
    #[default]
    Reject,
    /// Record the verdict and keep going; the response ends up flagged.
    Annotate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndeterminateAction {
    #[default]
    TreatHallucinated,
    TreatSafe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFlags {
    pub input_safety: bool,
    pub grounding: bool,
    pub hallucination_detection: bool,
    pub customizer: bool,
    pub repairer: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        StageFlags {
            input_safety: true,
            grounding: true,
            hallucination_detection: true,
            customizer: true,
            repairer: true,
        }
    }
}

impl StageFlags {
    pub fn none() -> Self {
        StageFlags {
            input_safety: false,
            grounding: false,
            hallucination_detection: false,
            customizer: false,
            repairer: false,
        }
    }

    /// Inference always runs.
    pub fn enabled(&self, stage: StageName) -> bool {
        match stage {
            StageName::InputSafety => self.input_safety,
            StageName::Grounding => self.grounding,
            StageName::Inference => true,
            StageName::HallucinationDetection => self.hallucination_detection,
            StageName::Customizer => self.customizer,
            StageName::Repairer => self.repairer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelinePolicy {
    pub stages_enabled: StageFlags,
    pub unsafe_input_action: UnsafeInputAction,
    pub indeterminate_hallucination_action: IndeterminateAction,
    pub top_k_contexts: usize,
    pub halu_threshold: f64,
    pub top_k_tokens: usize,
}

impl Default for PipelinePolicy {
    fn default() -> Self {
        PipelinePolicy {
            stages_enabled: StageFlags::default(),
            unsafe_input_action: UnsafeInputAction::default(),
            indeterminate_hallucination_action: IndeterminateAction::default(),
            top_k_contexts: 3,
            halu_threshold: 0.5,
            top_k_tokens: 10,
        }
    }
}

impl PipelinePolicy {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.halu_threshold) {
            return Err(PipelineError::InvalidPolicy(format!(
                "halu_threshold must be within [0, 1], got {}",
                self.halu_threshold
            )));
        }
        if self.top_k_contexts == 0 {
            return Err(PipelineError::InvalidPolicy("top_k_contexts must be at least 1".into()));
        }
        if self.top_k_tokens == 0 {
            return Err(PipelineError::InvalidPolicy("top_k_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    InputSafety,
    Grounding,
    Inference,
    HallucinationDetection,
    Customizer,
    Repairer,
}

impl StageName {
    /// Execution order.
    pub const ORDER: [StageName; 6] = [
        StageName::InputSafety,
        StageName::Grounding,
        StageName::Inference,
        StageName::HallucinationDetection,
        StageName::Customizer,
        StageName::Repairer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::InputSafety => "input_safety",
            StageName::Grounding => "grounding",
            StageName::Inference => "inference",
            StageName::HallucinationDetection => "hallucination_detection",
            StageName::Customizer => "customizer",
            StageName::Repairer => "repairer",
        }
    }

    fn required_slot(self) -> Option<BackendSlot> {
        match self {
            StageName::InputSafety => Some(BackendSlot::Moderation),
            StageName::Grounding => Some(BackendSlot::Embedding),
            StageName::Inference | StageName::HallucinationDetection => Some(BackendSlot::Generation),
            StageName::Customizer => None,
            StageName::Repairer => Some(BackendSlot::Fixing),
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageName,
    pub verdict_summary: String,
    pub elapsed_micros: u64,
    pub artifacts: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PipelineTrace {
    pub stages: Vec<StageRecord>,
}

impl PipelineTrace {
    pub fn stage_names(&self) -> Vec<StageName> {
        self.stages.iter().map(|s| s.stage).collect()
    }

    pub fn get(&self, stage: StageName) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Copy with every `elapsed_micros` zeroed, for stable comparisons.
    pub fn without_timings(&self) -> Self {
        let mut t = self.clone();
        for s in &mut t.stages {
            s.elapsed_micros = 0;
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Answered,
    Rejected,
    Repaired,
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResponse {
    pub final_text: String,
    pub status: PipelineStatus,
    pub trace: PipelineTrace,
}

struct Recorder {
    trace: PipelineTrace,
}

impl Recorder {
    fn time<T, E>(
        &mut self,
        stage: StageName,
        f: impl FnOnce() -> Result<(T, String, Value), E>,
    ) -> Result<T, PipelineError>
    where
        E: Into<BoxError>,
    {
        let start = Instant::now();
        let (out, verdict_summary, artifacts) = f().map_err(|e| PipelineError::stage(stage, e))?;
        self.trace.stages.push(StageRecord {
            stage,
            verdict_summary,
            elapsed_micros: start.elapsed().as_micros().try_into().unwrap_or(u64::MAX),
            artifacts,
        });
        Ok(out)
    }
}

fn chain_artifacts(outcome: &WrapperOutcome) -> Value {
    json!({ "modified": outcome.modified, "annotations": outcome.annotations })
}

/// The guardrail service object. Read-only during `run`, so one instance
/// can serve concurrent requests behind an `Arc`.
#[derive(Clone)]
pub struct Guardrail {
    registry: BackendRegistry,
    token_sets: YesNoTokenSets,
    input_threshold: f64,
    index: Option<Arc<VectorIndex>>,
    wrappers: Vec<Arc<dyn Wrapper>>,
    rejection_message: String,
}

impl Default for Guardrail {
    fn default() -> Self {
        Guardrail {
            registry: BackendRegistry::new(),
            token_sets: YesNoTokenSets::default(),
            input_threshold: DEFAULT_INPUT_UNSAFE_THRESHOLD,
            index: None,
            wrappers: Vec::new(),
            rejection_message: DEFAULT_REJECTION_MESSAGE.to_string(),
        }
    }
}

impl fmt::Debug for Guardrail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Guardrail")
            .field("input_threshold", &self.input_threshold)
            .field("index_len", &self.index.as_ref().map(|i| i.len()))
            .field("wrappers", &self.wrappers.iter().map(|w| w.name()).collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Guardrail {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last registration for a slot wins.
    pub fn register_backend(&mut self, slot: &str, backend: BackendHandle) -> Result<(), RegistryError> {
        self.registry.register(slot, backend)
    }

    pub fn with_backend(mut self, backend: BackendHandle) -> Self {
        self.registry.insert(backend);
        self
    }

    pub fn with_index(mut self, index: VectorIndex) -> Self {
        self.index = Some(Arc::new(index));
        self
    }

    pub fn with_wrapper(mut self, wrapper: Arc<dyn Wrapper>) -> Self {
        self.wrappers.push(wrapper);
        self
    }

    pub fn with_token_sets(mut self, sets: YesNoTokenSets) -> Self {
        self.token_sets = sets;
        self
    }

    pub fn with_input_threshold(mut self, threshold: f64) -> Self {
        self.input_threshold = threshold;
        self
    }

    pub fn with_rejection_message(mut self, message: impl Into<String>) -> Self {
        self.rejection_message = message.into();
        self
    }

    pub fn registry(&self) -> &BackendRegistry {
        &self.registry
    }

    pub fn token_sets(&self) -> &YesNoTokenSets {
        &self.token_sets
    }

    pub fn input_threshold(&self) -> f64 {
        self.input_threshold
    }

    pub fn index(&self) -> Option<&VectorIndex> {
        self.index.as_deref()
    }

    pub fn wrappers(&self) -> &[Arc<dyn Wrapper>] {
        &self.wrappers
    }

    pub fn rejection_message(&self) -> &str {
        &self.rejection_message
    }

    fn check_ready(&self, policy: &PipelinePolicy) -> Result<(), PipelineError> {
        for stage in StageName::ORDER {
            if !policy.stages_enabled.enabled(stage) {
                continue;
            }
            if let Some(slot) = stage.required_slot() {
                if !self.registry.is_registered(slot) {
                    return Err(PipelineError::BackendUnavailable { stage, slot });
                }
            }
        }
        if policy.stages_enabled.grounding && self.index.is_none() {
            return Err(PipelineError::MissingIndex);
        }
        Ok(())
    }

    pub fn run(&self, query: &Query, policy: &PipelinePolicy) -> Result<PipelineResponse, PipelineError> {
        query.validate()?;
        policy.validate()?;
        self.check_ready(policy)?;

        let flags = policy.stages_enabled;
        let mut rec = Recorder {
            trace: PipelineTrace::default(),
        };
        let mut input_flagged = false;

        if flags.input_safety {
            let moderation = self.registry.moderation().map_err(|e| PipelineError::stage(StageName::InputSafety, e))?;
            let verdict = rec.time(StageName::InputSafety, || {
                check_input(moderation, &query.text, self.input_threshold).map(|v| {
                    let label = match v.label {
                        SafetyLabel::Safe => "safe",
                        SafetyLabel::Unsafe => "unsafe",
                    };
                    let summary = format!("{label} (score {:.3})", v.score);
                    let artifacts = json!({
                        "label": v.label,
                        "score": v.score,
                        "threshold": self.input_threshold,
                        "action": policy.unsafe_input_action,
                    });
                    (v, summary, artifacts)
                })
            })?;
            if verdict.is_unsafe() {
                match policy.unsafe_input_action {
                    UnsafeInputAction::Reject => {
                        return Ok(PipelineResponse {
                            final_text: self.rejection_message.clone(),
                            status: PipelineStatus::Rejected,
                            trace: rec.trace,
                        });
                    }
                    UnsafeInputAction::Annotate => input_flagged = true,
                }
            }
        }

        let (prompt, context) = if flags.grounding {
            let embedder = self.registry.embedding().map_err(|e| PipelineError::stage(StageName::Grounding, e))?;
            let index = self.index.as_deref().ok_or(PipelineError::MissingIndex)?;
            rec.time(StageName::Grounding, || {
                ground_query(&query.text, index, policy.top_k_contexts, embedder).map(|g| {
                    let hits: Vec<Value> = g
                        .contexts
                        .iter()
                        .map(|r| json!({ "id": r.record.id, "similarity": r.similarity }))
                        .collect();
                    let summary = format!("{} contexts retrieved", g.contexts.len());
                    let prompt = g.prompt();
                    let artifacts = json!({ "contexts": hits, "prompt": prompt });
                    ((prompt, g.context_text()), summary, artifacts)
                })
            })?
        } else {
            (query.text.clone(), String::new())
        };

        let generation = self.registry.generation().map_err(|e| PipelineError::stage(StageName::Inference, e))?;
        let answer = rec.time(StageName::Inference, || {
            generation.generate(&prompt, policy.top_k_tokens).map(|out| {
                let summary = format!("{} chars generated", out.text.chars().count());
                let artifacts = json!({ "prompt": prompt, "answer": out.text });
                (out.text, summary, artifacts)
            })
        })?;

        let assessment = if flags.hallucination_detection {
            Some(rec.time(StageName::HallucinationDetection, || {
                detect_hallucination(generation, &query.text, &context, &answer, policy, &self.token_sets).map(|a| {
                    let verdict = if a.is_hallucinated { "hallucinated" } else { "not hallucinated" };
                    let summary = if a.indeterminate {
                        format!("{verdict} (indeterminate)")
                    } else {
                        format!("{verdict} (p_halu {:.3})", a.p_halu)
                    };
                    let artifacts = serde_json::to_value(&a).expect("assessment serializes");
                    (a, summary, artifacts)
                })
            })?)
        } else {
            None
        };

        let mut final_text = answer.clone();
        if flags.customizer {
            final_text = rec.time(StageName::Customizer, || {
                run_chain(&answer, &self.wrappers).map(|out| {
                    let summary = if out.modified { "modified" } else { "unchanged" }.to_string();
                    let artifacts = chain_artifacts(&out);
                    (out.text, summary, artifacts)
                })
            })?;
        }

        let hallucinated = assessment.as_ref().is_some_and(|a| a.is_hallucinated);
        let mut repaired = false;
        if hallucinated && flags.repairer {
            let fixing = self.registry.fixing().map_err(|e| PipelineError::stage(StageName::Repairer, e))?;
            let reason = assessment
                .as_ref()
                .map(|a| a.reason.trim())
                .filter(|r| !r.is_empty())
                .unwrap_or(UNEXPLAINED_REASON);
            let request = RepairRequest::new(query.text.as_str(), context.as_str(), answer.as_str(), reason);
            let (text, did_repair) = rec.time(StageName::Repairer, || -> Result<_, BoxError> {
                let result = repair(fixing, &request)?;
                let mut artifacts = json!({
                    "prompt": build_repair_prompt(&request),
                    "corrected_answer": result.corrected_answer,
                    "repaired": result.repaired,
                });
                let text = if !result.repaired {
                    final_text.clone()
                } else if flags.customizer {
                    // The corrected answer gets the same output treatment.
                    let out = run_chain(&result.corrected_answer, &self.wrappers)?;
                    artifacts["customizer"] = chain_artifacts(&out);
                    out.text
                } else {
                    result.corrected_answer.clone()
                };
                let summary = if result.repaired { "repaired" } else { "unchanged" }.to_string();
                Ok(((text, result.repaired), summary, artifacts))
            })?;
            final_text = text;
            repaired = did_repair;
        }

        let status = if input_flagged {
            PipelineStatus::Flagged
        } else if repaired {
            PipelineStatus::Repaired
        } else if hallucinated {
            PipelineStatus::Flagged
        } else {
            PipelineStatus::Answered
        };
        Ok(PipelineResponse {
            final_text,
            status,
            trace: rec.trace,
        })
    }
}
