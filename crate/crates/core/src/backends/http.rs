//! JSON-over-HTTP adapter for real model servers.
//!
//! One [`HttpBackend`] per slot, each pointing at its own endpoint:
//!
//! | slot       | request                                     | response                                      |
//! |------------|---------------------------------------------|-----------------------------------------------|
//! | moderation | `POST /classify {"text"}`                   | `{"score"}`                                   |
//! | generation | `POST /generate {"prompt","top_k"}`         | `{"text","candidates":[{"token","prob"}]}`    |
//! | embedding  | `POST /embed {"text"}`                      | `{"vector"}`                                  |
//! | reasoning  | `POST /explain {"question","context","answer"}` | `{"reason"}`                              |
//! | fixing     | `POST /complete {"prompt"}`                 | `{"text"}`                                    |
//!
//! Generation candidates may carry `"logit"` instead of `"prob"`; logits are
//! softmaxed over the returned candidates before truncation to `top_k`.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    normalize, softmax, BackendError, BackendSlot, EmbeddingBackend, FixingBackend, GenerationBackend,
    GenerationOutput, ModerationBackend, ReasoningBackend,
};
use crate::safety::{FirstTokenDistribution, TokenCandidate};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct HttpBackend {
    slot: BackendSlot,
    endpoint: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct TextRequest<'a> {
    text: &'a str,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    top_k: usize,
}

#[derive(Serialize)]
struct ExplainRequest<'a> {
    question: &'a str,
    context: &'a str,
    answer: &'a str,
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
    #[serde(default)]
    candidates: Vec<WireCandidate>,
}

#[derive(Deserialize)]
struct WireCandidate {
    token: String,
    #[serde(default)]
    prob: Option<f64>,
    #[serde(default)]
    logit: Option<f64>,
    #[serde(default)]
    token_id: Option<u32>,
}

#[derive(Deserialize)]
struct VectorResponse {
    vector: Vec<f64>,
}

#[derive(Deserialize)]
struct ReasonResponse {
    reason: String,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

impl HttpBackend {
    pub fn new(slot: BackendSlot, endpoint: impl Into<String>) -> Result<Self, BackendError> {
        Self::with_timeout(slot, endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(
        slot: BackendSlot,
        endpoint: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::failure(slot, e.to_string()))?;
        Ok(HttpBackend {
            slot,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            client,
        })
    }

    pub fn slot(&self) -> BackendSlot {
        self.slot
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = format!("{}/{}", self.endpoint, path);
        let fail = |msg: String| BackendError::failure(self.slot, format!("POST {url}: {msg}"));
        let response = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| fail(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(fail(format!("HTTP {}", status.as_u16())));
        }
        response.json().map_err(|e| fail(e.to_string()))
    }
}

fn wire_probs(candidates: &[WireCandidate]) -> Result<Vec<f64>, String> {
    if candidates.iter().all(|c| c.prob.is_some() && c.logit.is_none()) {
        return Ok(candidates.iter().filter_map(|c| c.prob).collect());
    }
    if candidates.iter().all(|c| c.logit.is_some() && c.prob.is_none()) {
        let logits: Vec<f64> = candidates.iter().filter_map(|c| c.logit).collect();
        return Ok(softmax(&logits));
    }
    Err("every candidate needs exactly one of `prob` or `logit`, used consistently".into())
}

impl ModerationBackend for HttpBackend {
    fn classify(&self, text: &str) -> Result<f64, BackendError> {
        let r: ScoreResponse = self.post("classify", &TextRequest { text })?;
        Ok(r.score)
    }
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, prompt: &str, top_k: usize) -> Result<GenerationOutput, BackendError> {
        let r: GenerateResponse = self.post("generate", &GenerateRequest { prompt, top_k })?;
        let probs = wire_probs(&r.candidates).map_err(|m| BackendError::failure(self.slot, m))?;
        let candidates = r
            .candidates
            .into_iter()
            .zip(probs)
            .enumerate()
            .map(|(i, (c, p))| TokenCandidate::new(c.token_id.unwrap_or(i as u32), c.token, p))
            .collect();
        let dist = FirstTokenDistribution::top_k(candidates, top_k)
            .map_err(|e| BackendError::failure(self.slot, e.to_string()))?;
        Ok(GenerationOutput {
            text: r.text,
            first_token_distribution: dist,
        })
    }
}

impl EmbeddingBackend for HttpBackend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let r: VectorResponse = self.post("embed", &TextRequest { text })?;
        normalize(r.vector).ok_or_else(|| BackendError::failure(self.slot, "server returned a zero vector"))
    }
}

impl ReasoningBackend for HttpBackend {
    fn explain(&self, question: &str, context: &str, answer: &str) -> Result<String, BackendError> {
        let r: ReasonResponse = self.post(
            "explain",
            &ExplainRequest {
                question,
                context,
                answer,
            },
        )?;
        Ok(r.reason)
    }
}

impl FixingBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let r: TextResponse = self.post("complete", &CompleteRequest { prompt })?;
        Ok(r.text)
    }
}
