//! Service configuration: a single TOML document, scalar fields overridable
//! through `GUARDRAIL_*` environment variables.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use guardrail_core::backends::http::HttpBackend;
use guardrail_core::backends::mock::{
    FixingFallback, GenerationFallback, GenerationScript, KeywordModeration, MissPolicy, NgramEmbedder,
    PromptMatcher, ScriptedFixing, ScriptedGeneration, ScriptedReasoning, DEFAULT_FALLBACK_REASON,
};
use guardrail_core::backends::{BackendHandle, BackendSlot, ReasoningBackend};
use guardrail_core::customizer::{
    BlocklistClient, FileBlocklist, HttpReachability, ProbeFailurePolicy, ReachabilityClient,
    StaticBlocklist, StaticReachability, UrlWarningWrapper, Wrapper, URL_WARNING_WRAPPER,
};
use guardrail_core::grounding::{build_index, load_corpus};
use guardrail_core::pipeline::{DEFAULT_REJECTION_MESSAGE, Guardrail, PipelinePolicy};
use guardrail_core::safety::DEFAULT_INPUT_UNSAFE_THRESHOLD;
use guardrail_core::IndexStrategy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "GUARDRAIL_";

/// Marker in the detection prompt; the default mock generator answers
/// "No." to any prompt containing it.
const DETECTION_MARKER: &str = "Does the answer contain hallucination?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub policy: PipelinePolicy,
    pub input_unsafe_threshold: f64,
    pub rejection_message: String,
    pub backends: BTreeMap<String, BackendDescriptor>,
    pub corpus_path: Option<PathBuf>,
    pub index_strategy: IndexStrategy,
    pub customizer: CustomizerConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            policy: PipelinePolicy::default(),
            input_unsafe_threshold: DEFAULT_INPUT_UNSAFE_THRESHOLD,
            rejection_message: DEFAULT_REJECTION_MESSAGE.into(),
            backends: BTreeMap::new(),
            corpus_path: None,
            index_strategy: IndexStrategy::KeyInformation,
            customizer: CustomizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    /// Kind-specific settings; see the README for the mock keys.
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl BackendDescriptor {
    pub fn mock() -> Self {
        BackendDescriptor {
            kind: BackendKind::Mock,
            endpoint: None,
            timeout_ms: None,
            config: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomizerConfig {
    pub wrappers: Vec<String>,
    pub url_warning: UrlWarningConfig,
}

impl Default for CustomizerConfig {
    fn default() -> Self {
        CustomizerConfig {
            wrappers: vec![URL_WARNING_WRAPPER.to_string()],
            url_warning: UrlWarningConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UrlWarningConfig {
    /// Blocklisted URLs or host names.
    pub blocklist: Vec<String>,
    pub blocklist_path: Option<PathBuf>,
    pub reachability: BackendKind,
    /// Mock reachability answers; unlisted URLs get 200.
    pub statuses: BTreeMap<String, u16>,
    pub probe_timeout_ms: u64,
    pub probe_failure: ProbeFailurePolicy,
}

impl Default for UrlWarningConfig {
    fn default() -> Self {
        UrlWarningConfig {
            blocklist: Vec::new(),
            blocklist_path: None,
            reachability: BackendKind::Mock,
            statuses: BTreeMap::new(),
            probe_timeout_ms: 5000,
            probe_failure: ProbeFailurePolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
    #[error("{path}: {message}")]
    Build { path: String, message: String },
}

impl ConfigError {
    fn build(path: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError::Build {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Clone, Copy)]
enum Scalar {
    Str,
    Float,
    Int,
    Bool,
}

/// Dotted config paths that may be overridden from the environment.
/// `policy.top_k_tokens` is set by `GUARDRAIL_POLICY_TOP_K_TOKENS`.
const SCALAR_PATHS: &[(&str, Scalar)] = &[
    ("listen", Scalar::Str),
    ("input_unsafe_threshold", Scalar::Float),
    ("rejection_message", Scalar::Str),
    ("corpus_path", Scalar::Str),
    ("index_strategy", Scalar::Str),
    ("policy.unsafe_input_action", Scalar::Str),
    ("policy.indeterminate_hallucination_action", Scalar::Str),
    ("policy.top_k_contexts", Scalar::Int),
    ("policy.halu_threshold", Scalar::Float),
    ("policy.top_k_tokens", Scalar::Int),
    ("policy.stages_enabled.input_safety", Scalar::Bool),
    ("policy.stages_enabled.grounding", Scalar::Bool),
    ("policy.stages_enabled.hallucination_detection", Scalar::Bool),
    ("policy.stages_enabled.customizer", Scalar::Bool),
    ("policy.stages_enabled.repairer", Scalar::Bool),
    ("customizer.url_warning.blocklist_path", Scalar::Str),
    ("customizer.url_warning.reachability", Scalar::Str),
    ("customizer.url_warning.probe_timeout_ms", Scalar::Int),
    ("customizer.url_warning.probe_failure", Scalar::Str),
    ("backends.moderation.kind", Scalar::Str),
    ("backends.moderation.endpoint", Scalar::Str),
    ("backends.generation.kind", Scalar::Str),
    ("backends.generation.endpoint", Scalar::Str),
    ("backends.embedding.kind", Scalar::Str),
    ("backends.embedding.endpoint", Scalar::Str),
    ("backends.reasoning.kind", Scalar::Str),
    ("backends.reasoning.endpoint", Scalar::Str),
    ("backends.fixing.kind", Scalar::Str),
    ("backends.fixing.endpoint", Scalar::Str),
];

pub fn env_var_name(path: &str) -> String {
    format!("{ENV_PREFIX}{}", path.replace('.', "_").to_ascii_uppercase())
}

fn scalar_value(path: &str, kind: Scalar, raw: &str) -> Result<toml::Value, FieldError> {
    let bad = |what: &str| FieldError {
        path: path.to_string(),
        message: format!("environment value `{raw}` is not a valid {what}"),
    };
    Ok(match kind {
        Scalar::Str => toml::Value::String(raw.to_string()),
        Scalar::Float => toml::Value::Float(raw.trim().parse().map_err(|_| bad("number"))?),
        Scalar::Int => toml::Value::Integer(raw.trim().parse().map_err(|_| bad("integer"))?),
        Scalar::Bool => toml::Value::Boolean(raw.trim().parse().map_err(|_| bad("boolean"))?),
    })
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty path");
    let mut table = root;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        table = entry.as_table_mut().expect("just made a table");
    }
    table.insert(last.to_string(), value);
}

impl ServiceConfig {
    /// Parse `text` and apply overrides from `env`. Cross-field rules are
    /// checked separately by [`ServiceConfig::validate`].
    pub fn from_toml_with_env<I, K, V>(text: &str, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let env: HashMap<String, String> = env
            .into_iter()
            .map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string()))
            .collect();
        let mut errors = Vec::new();
        for (path, kind) in SCALAR_PATHS {
            if let Some(raw) = env.get(&env_var_name(path)) {
                match scalar_value(path, *kind, raw) {
                    Ok(v) => set_path(&mut root, path, v),
                    Err(e) => errors.push(e),
                }
            }
        }
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        let config: ServiceConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_env(text, std::iter::empty::<(String, String)>())
    }

    /// Load a file, applying the process environment. Relative paths inside
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_with_env(&text, std::env::vars())?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.corpus_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.customizer.url_warning.blocklist_path.as_mut() {
            fix(p);
        }
        for d in self.backends.values_mut() {
            if let Some(script) = d.config.get_mut("script") {
                let mut p = PathBuf::from(&*script);
                fix(&mut p);
                *script = p.to_string_lossy().into_owned();
            }
        }
    }

    /// Every violation, each tagged with its field path.
    pub fn validation_errors(&self) -> Vec<FieldError> {
        let mut errors = Vec::new();
        let mut err = |path: &str, message: String| {
            errors.push(FieldError {
                path: path.to_string(),
                message,
            })
        };

        if self.listen.parse::<SocketAddr>().is_err() {
            err("listen", format!("`{}` is not a socket address", self.listen));
        }
        if !(0.0..=1.0).contains(&self.input_unsafe_threshold) {
            err("input_unsafe_threshold", "must be within [0, 1]".into());
        }
        let p = &self.policy;
        if !(0.0..=1.0).contains(&p.halu_threshold) {
            err("policy.halu_threshold", "must be within [0, 1]".into());
        }
        if p.top_k_contexts == 0 {
            err("policy.top_k_contexts", "must be at least 1".into());
        }
        if p.top_k_tokens == 0 {
            err("policy.top_k_tokens", "must be at least 1".into());
        }

        for name in self.backends.keys() {
            if name.parse::<BackendSlot>().is_err() {
                err(&format!("backends.{name}"), "unknown backend slot".into());
            }
        }
        let flags = p.stages_enabled;
        let required = [
            (flags.input_safety, BackendSlot::Moderation, "policy.stages_enabled.input_safety"),
            (true, BackendSlot::Generation, "inference"),
            (flags.grounding, BackendSlot::Embedding, "policy.stages_enabled.grounding"),
            (flags.repairer, BackendSlot::Fixing, "policy.stages_enabled.repairer"),
        ];
        for (enabled, slot, why) in required {
            if enabled && !self.backends.contains_key(slot.as_str()) {
                err(&format!("backends.{slot}"), format!("required by {why}"));
            }
        }
        for (name, d) in &self.backends {
            if d.kind == BackendKind::Http && d.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                err(&format!("backends.{name}.endpoint"), "required when kind = \"http\"".into());
            }
        }

        match (flags.grounding, &self.corpus_path) {
            (true, None) => err("corpus_path", "required when grounding is enabled".into()),
            (false, Some(_)) => err("corpus_path", "must be unset when grounding is disabled".into()),
            _ => {}
        }

        let mut seen = Vec::new();
        for (i, w) in self.customizer.wrappers.iter().enumerate() {
            let path = format!("customizer.wrappers[{i}]");
            if w != URL_WARNING_WRAPPER {
                err(&path, format!("unknown wrapper `{w}`"));
            } else if seen.contains(&w) {
                err(&path, format!("duplicate wrapper `{w}`"));
            }
            seen.push(w);
        }
        if self.customizer.url_warning.probe_timeout_ms == 0 {
            err("customizer.url_warning.probe_timeout_ms", "must be positive".into());
        }
        errors
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let errors = self.validation_errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// Descriptor for `slot`, defaulting to a mock.
    pub fn descriptor(&self, slot: BackendSlot) -> BackendDescriptor {
        self.backends.get(slot.as_str()).cloned().unwrap_or_else(BackendDescriptor::mock)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationScriptFile {
    #[serde(default)]
    rules: Vec<GenerationRule>,
    #[serde(default = "default_generation_fallback")]
    fallback: GenerationFallback,
}

fn default_generation_fallback() -> GenerationFallback {
    GenerationFallback::EchoContext
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationRule {
    matcher: PromptMatcher,
    script: GenerationScript,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixingRule {
    matcher: PromptMatcher,
    completion: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &str, field: &str) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::build(field, format!("{path}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| ConfigError::build(field, format!("{path}: {e}")))
}

fn parse_f64(d: &BackendDescriptor, key: &str, field: &str) -> Result<Option<f64>, ConfigError> {
    d.config
        .get(key)
        .map(|v| v.trim().parse::<f64>().map_err(|e| ConfigError::build(format!("{field}.config.{key}"), e)))
        .transpose()
}

fn parse_usize(d: &BackendDescriptor, key: &str, field: &str) -> Result<Option<usize>, ConfigError> {
    d.config
        .get(key)
        .map(|v| v.trim().parse::<usize>().map_err(|e| ConfigError::build(format!("{field}.config.{key}"), e)))
        .transpose()
}

fn http_backend(slot: BackendSlot, d: &BackendDescriptor) -> Result<HttpBackend, ConfigError> {
    let field = format!("backends.{slot}");
    let endpoint = d
        .endpoint
        .clone()
        .ok_or_else(|| ConfigError::build(format!("{field}.endpoint"), "required when kind = \"http\""))?;
    let timeout = d
        .timeout_ms
        .map(Duration::from_millis)
        .unwrap_or(guardrail_core::backends::http::DEFAULT_TIMEOUT);
    HttpBackend::with_timeout(slot, endpoint, timeout).map_err(|e| ConfigError::build(field, e))
}

/// Build the backend for `slot` from its descriptor.
///
/// Mock settings (all optional, in `config`):
/// moderation `keywords = "word=score,..."`, `default_score`;
/// generation `script` (JSON rules file; default echoes context and answers
/// "No." to detection prompts); embedding `dim`, `ngram`;
/// reasoning `fallback_reason`, `script` (JSON map answer -> reason);
/// fixing `mode = echo|fixed`, `text`, `script` (JSON rule list).
pub fn build_backend(slot: BackendSlot, d: &BackendDescriptor) -> Result<BackendHandle, ConfigError> {
    let field = format!("backends.{slot}");
    if d.kind == BackendKind::Http {
        let b = Arc::new(http_backend(slot, d)?);
        return Ok(match slot {
            BackendSlot::Moderation => BackendHandle::Moderation(b),
            BackendSlot::Generation => BackendHandle::Generation(b),
            BackendSlot::Embedding => BackendHandle::Embedding(b),
            BackendSlot::Reasoning => BackendHandle::Reasoning(b),
            BackendSlot::Fixing => BackendHandle::Fixing(b),
        });
    }

    Ok(match slot {
        BackendSlot::Moderation => {
            let mut m = KeywordModeration::new();
            if let Some(score) = parse_f64(d, "default_score", &field)? {
                m = m.with_default_score(score);
            }
            if let Some(rules) = d.config.get("keywords") {
                for item in rules.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (word, score) = item.rsplit_once('=').ok_or_else(|| {
                        ConfigError::build(format!("{field}.config.keywords"), format!("`{item}` is not word=score"))
                    })?;
                    let score: f64 = score
                        .trim()
                        .parse()
                        .map_err(|e| ConfigError::build(format!("{field}.config.keywords"), e))?;
                    m = m.with_rule(word.trim(), score);
                }
            }
            BackendHandle::Moderation(Arc::new(m))
        }
        BackendSlot::Generation => {
            let g = match d.config.get("script") {
                Some(path) => {
                    let file: GenerationScriptFile = read_json(path, &format!("{field}.config.script"))?;
                    file.rules
                        .into_iter()
                        .fold(ScriptedGeneration::with_fallback(file.fallback), |g, r| g.with_rule(r.matcher, r.script))
                }
                None => ScriptedGeneration::echo()
                    .with_contains(DETECTION_MARKER, GenerationScript::probs("No.", &[("No", 1.0)])),
            };
            BackendHandle::Generation(Arc::new(g))
        }
        BackendSlot::Embedding => {
            let dim = parse_usize(d, "dim", &field)?.unwrap_or(256);
            let n = parse_usize(d, "ngram", &field)?.unwrap_or(3);
            if dim == 0 || n == 0 {
                return Err(ConfigError::build(format!("{field}.config"), "dim and ngram must be positive"));
            }
            BackendHandle::Embedding(Arc::new(NgramEmbedder::new(dim, n)))
        }
        BackendSlot::Reasoning => {
            let fallback = d
                .config
                .get("fallback_reason")
                .cloned()
                .unwrap_or_else(|| DEFAULT_FALLBACK_REASON.to_string());
            let mut r = ScriptedReasoning::new(MissPolicy::Fallback(fallback));
            if let Some(path) = d.config.get("script") {
                let table: BTreeMap<String, String> = read_json(path, &format!("{field}.config.script"))?;
                for (answer, reason) in table {
                    r = r.with_entry(answer, reason);
                }
            }
            BackendHandle::Reasoning(Arc::new(r))
        }
        BackendSlot::Fixing => {
            let fallback = match d.config.get("mode").map(String::as_str) {
                None | Some("echo") => FixingFallback::Echo,
                Some("fixed") => FixingFallback::Fixed(d.config.get("text").cloned().unwrap_or_default()),
                Some(other) => {
                    return Err(ConfigError::build(format!("{field}.config.mode"), format!("unknown mode `{other}`")))
                }
            };
            let mut f = ScriptedFixing::new(fallback);
            if let Some(path) = d.config.get("script") {
                let rules: Vec<FixingRule> = read_json(path, &format!("{field}.config.script"))?;
                for rule in rules {
                    f = f.with_rule(rule.matcher, rule.completion);
                }
            }
            BackendHandle::Fixing(Arc::new(f))
        }
    })
}

/// The reasoning backend used by data preparation.
pub fn build_reasoning(config: &ServiceConfig) -> Result<Arc<dyn ReasoningBackend>, ConfigError> {
    match build_backend(BackendSlot::Reasoning, &config.descriptor(BackendSlot::Reasoning))? {
        BackendHandle::Reasoning(r) => Ok(r),
        _ => unreachable!("reasoning slot builds a reasoning handle"),
    }
}

pub fn build_url_wrapper(cfg: &UrlWarningConfig) -> Result<UrlWarningWrapper, ConfigError> {
    let field = "customizer.url_warning";
    let blocklist: Arc<dyn BlocklistClient> = match &cfg.blocklist_path {
        Some(path) => {
            let mut text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::build(format!("{field}.blocklist_path"), format!("{}: {e}", path.display())))?;
            for entry in &cfg.blocklist {
                text.push('\n');
                text.push_str(entry);
            }
            Arc::new(FileBlocklist::parse(&text))
        }
        None if cfg.blocklist.iter().all(|e| e.contains("://")) => Arc::new(StaticBlocklist::new(cfg.blocklist.clone())),
        None => Arc::new(FileBlocklist::parse(&cfg.blocklist.join("\n"))),
    };
    let reachability: Arc<dyn ReachabilityClient> = match cfg.reachability {
        BackendKind::Mock => Arc::new(
            cfg.statuses
                .iter()
                .fold(StaticReachability::new(), |r, (url, status)| r.with_status(url.clone(), *status)),
        ),
        BackendKind::Http => Arc::new(
            HttpReachability::new(Duration::from_millis(cfg.probe_timeout_ms))
                .map_err(|e| ConfigError::build(format!("{field}.reachability"), e))?,
        ),
    };
    Ok(UrlWarningWrapper::new(blocklist, reachability).with_probe_failure(cfg.probe_failure))
}

pub fn build_wrappers(config: &CustomizerConfig) -> Result<Vec<Arc<dyn Wrapper>>, ConfigError> {
    config
        .wrappers
        .iter()
        .enumerate()
        .map(|(i, name)| match name.as_str() {
            URL_WARNING_WRAPPER => Ok(Arc::new(build_url_wrapper(&config.url_warning)?) as Arc<dyn Wrapper>),
            other => Err(ConfigError::build(format!("customizer.wrappers[{i}]"), format!("unknown wrapper `{other}`"))),
        })
        .collect()
}

/// Build the full pipeline. Slots without a descriptor get mocks; the
/// corpus is indexed when a path is configured.
pub fn build_guardrail(config: &ServiceConfig) -> Result<Guardrail, ConfigError> {
    let mut g = Guardrail::new()
        .with_input_threshold(config.input_unsafe_threshold)
        .with_rejection_message(config.rejection_message.clone());
    for slot in BackendSlot::ALL {
        g = g.with_backend(build_backend(slot, &config.descriptor(slot))?);
    }
    if let Some(path) = &config.corpus_path {
        let corpus = load_corpus(path).map_err(|e| ConfigError::build("corpus_path", e))?;
        let embedder = g.registry().embedding().map_err(|e| ConfigError::build("backends.embedding", e))?;
        let index = build_index(&corpus, config.index_strategy, embedder)
            .map_err(|e| ConfigError::build("corpus_path", e))?;
        g = g.with_index(index);
    }
    for w in build_wrappers(&config.customizer)? {
        g = g.with_wrapper(w);
    }
    Ok(g)
}
