//! Rewrites hallucinated answers using the detector's explanation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, FixingBackend};

const ANSWER_LABEL: &str = "\n#Answer#: ";
const REASON_LABEL: &str = "\n#Hallucination Reason#: ";
const INSTRUCTION: &str =
    "\nRewrite the answer so it is faithful to the context and free of the described hallucination.\n#Corrected Answer#:";

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("repair request field `{0}` is empty")]
    EmptyField(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairRequest {
    pub question: String,
    pub context: String,
    pub answer: String,
    pub reason: String,
}

impl RepairRequest {
    pub fn new(
        question: impl Into<String>,
        context: impl Into<String>,
        answer: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        RepairRequest {
            question: question.into(),
            context: context.into(),
            answer: answer.into(),
            reason: reason.into(),
        }
    }

    /// Question, answer and reason must be non-blank. An empty context is
    /// allowed so ungrounded answers can still be repaired.
    pub fn validate(&self) -> Result<(), RepairError> {
        for (name, value) in [
            ("question", &self.question),
            ("answer", &self.answer),
            ("reason", &self.reason),
        ] {
            if value.trim().is_empty() {
                return Err(RepairError::EmptyField(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairResult {
    pub corrected_answer: String,
    pub repaired: bool,
}

/// Fixing prompt. Field values are inserted verbatim, without escaping.
pub fn build_repair_prompt(req: &RepairRequest) -> String {
    format!(
        "#Question#: {}\n#Context#: {}{ANSWER_LABEL}{}{REASON_LABEL}{}{INSTRUCTION}",
        req.question, req.context, req.answer, req.reason
    )
}

/// The `#Answer#` field of a repair prompt.
pub(crate) fn answer_field(prompt: &str) -> Option<&str> {
    let start = prompt.find(ANSWER_LABEL)? + ANSWER_LABEL.len();
    let rest = &prompt[start..];
    let end = rest.rfind(REASON_LABEL)?;
    Some(&rest[..end])
}

/// Single repair attempt. An answer that comes back unchanged (after
/// trimming) is reported as not repaired and the original is kept.
pub fn repair(backend: &dyn FixingBackend, req: &RepairRequest) -> Result<RepairResult, RepairError> {
    req.validate()?;
    let completion = backend.complete(&build_repair_prompt(req))?;
    let corrected = completion.trim();
    if corrected == req.answer.trim() || corrected.is_empty() {
        Ok(RepairResult {
            corrected_answer: req.answer.clone(),
            repaired: false,
        })
    } else {
        Ok(RepairResult {
            corrected_answer: corrected.to_string(),
            repaired: true,
        })
    }
}
