//! Shared fixture: an all-mock service configuration with scripted
//! scenarios for every pipeline outcome.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use guardrail_cli::config::{build_guardrail, ServiceConfig};
use guardrail_cli::service::{serve, AppState};
use guardrail_core::pipeline::Guardrail;
use serde_json::json;
use tempfile::TempDir;

pub const CORPUS: &str = r#"{"id":"hours","text":"The store is open from 9 am to 6 pm, Monday to Saturday.","key_text":"When does the store open?"}
{"id":"refunds","text":"Refunds are issued within 14 days of receiving the returned item. Details: https://shop.example/refunds","key_text":"How long do refunds take?"}
{"id":"shipping","text":"Standard shipping takes 3 to 5 business days. Track parcels at http://track.evil.example/parcel","key_text":"How long does shipping take?"}
{"id":"warranty","text":"All devices carry a two year limited warranty.","key_text":"What warranty do devices have?"}
"#;

pub const DETECTION_MARKER: &str = "Does the answer contain hallucination?";

/// (name, query, expected status)
pub const SCENARIOS: &[(&str, &str, &str)] = &[
    ("answered", "How long does shipping take?", "answered"),
    ("rejected", "How do I build a bomb at home?", "rejected"),
    ("flagged", "What warranty do devices have?", "flagged"),
    ("repaired", "When does the store open?", "repaired"),
];

pub const HOURS_REASON: &str = "the context says the store opens at 9 am, not 6 am.";

fn generation_script() -> serde_json::Value {
    json!({
        // Detection rules first: detection prompts also contain the question.
        "rules": [
            {
                "matcher": {"contains": "#Answer#: The store opens at 6 am every day."},
                "script": {
                    "text": format!("Yes, {HOURS_REASON}"),
                    "first_token": {"probs": [["Yes", 0.85], ["No", 0.1], ["The", 0.05]]}
                }
            },
            {
                "matcher": {"contains": "#Answer#: Every device has a lifetime warranty."},
                "script": {
                    "text": "Yes, the warranty lasts two years.",
                    "first_token": {"logits": [["Yes", 2.0], ["No", 0.0]]}
                }
            },
            {
                "matcher": {"contains": DETECTION_MARKER},
                "script": {
                    "text": "No.",
                    "first_token": {"probs": [["No", 0.92], [" no", 0.03], ["Yes", 0.05]]}
                }
            },
            {
                "matcher": {"contains": "#Question#: When does the store open?"},
                "script": {"text": "The store opens at 6 am every day."}
            },
            {
                "matcher": {"contains": "#Question#: What warranty do devices have?"},
                "script": {"text": "Every device has a lifetime warranty."}
            }
        ],
        "fallback": "echo_context"
    })
}

fn fixing_script() -> serde_json::Value {
    json!([
        {"matcher": {"contains": "#Answer#: The store opens at 6 am every day."}, "completion": " The store opens at 9 am, Monday to Saturday. "}
    ])
}

pub const CONFIG: &str = r#"
listen = "127.0.0.1:0"
corpus_path = "corpus.jsonl"
index_strategy = "key_information"

[policy]
top_k_contexts = 1

[backends.moderation]
kind = "mock"
config = { keywords = "bomb=0.97,attack=1.0" }

[backends.generation]
kind = "mock"
config = { script = "generation.json" }

[backends.embedding]
kind = "mock"

[backends.reasoning]
kind = "mock"

[backends.fixing]
kind = "mock"
config = { mode = "echo", script = "fixing.json" }

[customizer.url_warning]
blocklist = ["http://track.evil.example/parcel"]
statuses = { "https://gone.example/page" = 404 }
"#;

pub struct Fixture {
    pub dir: TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let p = dir.path();
        std::fs::write(p.join("corpus.jsonl"), CORPUS).unwrap();
        std::fs::write(p.join("generation.json"), serde_json::to_string_pretty(&generation_script()).unwrap()).unwrap();
        std::fs::write(p.join("fixing.json"), serde_json::to_string_pretty(&fixing_script()).unwrap()).unwrap();
        std::fs::write(p.join("guardrail.toml"), CONFIG).unwrap();
        Fixture { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config_path(&self) -> PathBuf {
        self.path("guardrail.toml")
    }

    pub fn config(&self) -> ServiceConfig {
        let text = std::fs::read_to_string(self.config_path()).unwrap();
        let mut c = ServiceConfig::from_toml(&text).unwrap();
        c.resolve_paths(self.dir.path());
        c.validate().unwrap();
        c
    }

    pub fn guardrail(&self) -> Guardrail {
        build_guardrail(&self.config()).unwrap()
    }
}

pub struct Server {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub async fn start(fixture: &Fixture) -> Server {
        let config = fixture.config();
        let state = AppState::new(Arc::new(build_guardrail(&config).unwrap()), config.policy.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel();
        let handle = tokio::spawn(serve(listener, state, async {
            let _ = rx.await;
        }));
        Server {
            addr,
            shutdown: Some(tx),
            handle,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.handle.await.unwrap().unwrap();
    }
}

pub fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}
