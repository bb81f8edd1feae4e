//! Guardrail pipeline around a black-box language model: input moderation,
//! retrieval grounding, hallucination detection with explanations, output
//! wrappers and answer repair.

pub mod backends;
pub mod customizer;
pub mod dataprep;
pub mod grounding;
pub mod pipeline;
pub mod repairer;
pub mod safety;

pub use backends::{BackendError, BackendHandle, BackendRegistry, BackendSlot, RegistryError};
pub use customizer::{run_chain, Annotation, Wrapper, WrapperOutcome};
pub use grounding::{IndexStrategy, KnowledgeRecord, VectorIndex};
pub use pipeline::{
    Guardrail, PipelineError, PipelinePolicy, PipelineResponse, PipelineStatus, PipelineTrace, Query,
    StageName,
};
pub use repairer::{RepairRequest, RepairResult};
pub use safety::{
    compute_p_halu, FirstTokenDistribution, HallucinationAssessment, PHalu, SafetyVerdict,
    TokenCandidate, YesNoTokenSets,
};
