//! Training-data preparation for the hallucination detector.
//!
//! Labeled (question, context, answer, hallucinated?) records become
//! prompt/response pairs: hallucinated records get `"Yes, " + reason` with
//! the reason fetched from the reasoning backend, the rest get `"No."`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, FixingBackend, ReasoningBackend};

const DETECTION_HEADER: &str = "You are a hallucination detector...\n";
const DETECTION_QUESTION: &str = "#Question#: ";
const DETECTION_CONTEXT: &str = "\n#Context#: ";
const DETECTION_ANSWER: &str = "\n#Answer#: ";
const DETECTION_FOOTER: &str =
    "\nDoes the answer contain hallucination? Answer Yes or No, and explain if Yes.\n";

const REASONING_INSTRUCTION: &str =
    "The answer above is hallucinated. Explain briefly why it is not faithful to the question and context.";

pub const NOT_HALLUCINATED_RESPONSE: &str = "No.";
pub const HALLUCINATED_PREFIX: &str = "Yes, ";

/// Detection prompt shared by training data and detector inference.
pub fn render_detection_prompt(question: &str, context: &str, answer: &str) -> String {
    let mut out = String::with_capacity(
        DETECTION_HEADER.len() + DETECTION_FOOTER.len() + question.len() + context.len() + answer.len() + 48,
    );
    out.push_str(DETECTION_HEADER);
    out.push_str(DETECTION_QUESTION);
    out.push_str(question);
    out.push_str(DETECTION_CONTEXT);
    out.push_str(context);
    out.push_str(DETECTION_ANSWER);
    out.push_str(answer);
    out.push_str(DETECTION_FOOTER);
    out
}

/// Recover (question, context, answer) from a detection prompt.
///
/// Field values must not themselves contain the `\n#Context#: ` or
/// `\n#Answer#: ` separators.
pub fn parse_detection_prompt(prompt: &str) -> Option<(String, String, String)> {
    let body = prompt
        .strip_prefix(DETECTION_HEADER)?
        .strip_prefix(DETECTION_QUESTION)?
        .strip_suffix(DETECTION_FOOTER)?;
    let (question, rest) = body.split_once(DETECTION_CONTEXT)?;
    let (context, answer) = rest.split_once(DETECTION_ANSWER)?;
    Some((question.to_string(), context.to_string(), answer.to_string()))
}

/// Prompt sent to a reasoning model to explain a hallucinated answer.
pub fn render_reasoning_prompt(question: &str, context: &str, answer: &str) -> String {
    format!(
        "#Question#: {question}\n#Context#: {context}\n#Answer#: {answer}\n{REASONING_INSTRUCTION}\n#Reason#:"
    )
}

/// Serves the reasoning slot from any plain completion model by rendering
/// the reasoning prompt.
pub struct CompletionReasoner<B> {
    completion: B,
}

impl<B: FixingBackend> CompletionReasoner<B> {
    pub fn new(completion: B) -> Self {
        CompletionReasoner { completion }
    }
}

impl<B: FixingBackend> ReasoningBackend for CompletionReasoner<B> {
    fn explain(&self, question: &str, context: &str, answer: &str) -> Result<String, BackendError> {
        let reason = self
            .completion
            .complete(&render_reasoning_prompt(question, context, answer))?;
        Ok(reason.trim().to_string())
    }
}

/// One labeled input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawHaluRecord {
    pub question: String,
    #[serde(default)]
    pub context: String,
    pub llm_answer: String,
    /// `true` when the answer is hallucinated.
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    #[default]
    Abort,
    Skip,
}

#[derive(Debug, Error)]
pub enum DataPrepError {
    #[error("record {index}: {message}")]
    InvalidRecord { index: usize, message: String },
    #[error("record {index}: {source}")]
    Backend {
        index: usize,
        #[source]
        source: BackendError,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Output of [`process_dataset`]. `skipped` lists input indices dropped
/// under [`FailureMode::Skip`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProcessedDataset {
    pub records: Vec<TrainingRecord>,
    pub skipped: Vec<usize>,
}

pub fn process_dataset(
    records: &[RawHaluRecord],
    reasoning: &dyn ReasoningBackend,
    on_failure: FailureMode,
) -> Result<ProcessedDataset, DataPrepError> {
    let mut out = ProcessedDataset {
        records: Vec::with_capacity(records.len()),
        skipped: Vec::new(),
    };
    for (index, record) in records.iter().enumerate() {
        if record.question.trim().is_empty() {
            return Err(DataPrepError::InvalidRecord {
                index,
                message: "question is empty".into(),
            });
        }
        if record.llm_answer.trim().is_empty() {
            return Err(DataPrepError::InvalidRecord {
                index,
                message: "llm_answer is empty".into(),
            });
        }
        let response = if record.label {
            match reasoning.explain(&record.question, &record.context, &record.llm_answer) {
                Ok(reason) => format!("{HALLUCINATED_PREFIX}{reason}"),
                Err(source) => match on_failure {
                    FailureMode::Abort => return Err(DataPrepError::Backend { index, source }),
                    FailureMode::Skip => {
                        tracing::warn!(index, error = %source, "skipping record");
                        out.skipped.push(index);
                        continue;
                    }
                },
            }
        } else {
            NOT_HALLUCINATED_RESPONSE.to_string()
        };
        out.records.push(TrainingRecord {
            prompt: render_detection_prompt(&record.question, &record.context, &record.llm_answer),
            response,
        });
    }
    Ok(out)
}

/// Read one JSON value per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<T>, DataPrepError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DataPrepError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<(), DataPrepError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
