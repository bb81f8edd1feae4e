use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Annotation, Wrapper, WrapperError, WrapperOutcome};

pub const URL_WARNING_WRAPPER: &str = "url_warning";

/// Pseudo status recorded when a reachability probe itself fails.
pub const UNREACHABLE_PROBE_FAILURE: u16 = 499;

const WARNING_HEADER: &str = "[WARNING] This response contains potentially unsafe URLs:\n";
const TRAILING_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', ')'];
const MAX_REDIRECTS: usize = 5;

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"https?://[^\s<"]+"#).expect("valid URL pattern"))
}

/// All `http://` / `https://` URLs in order of appearance, duplicates kept,
/// with trailing `.,;:!?)` removed.
pub fn extract_urls(text: &str) -> Vec<String> {
    url_pattern()
        .find_iter(text)
        .filter_map(|m| {
            let url = m.as_str().trim_end_matches(TRAILING_PUNCTUATION);
            let rest = url.split_once("://").map_or("", |(_, r)| r);
            (!rest.is_empty()).then(|| url.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    Blocklist,
    Reachability,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} client failed for {url}: {message}")]
pub struct ClientError {
    pub kind: ClientKind,
    pub url: String,
    pub message: String,
}

/// Phishing/malware lookup.
pub trait BlocklistClient: Send + Sync {
    fn lookup(&self, url: &str) -> Result<bool, ClientError>;
}

/// Returns the HTTP status a URL finally answers with.
pub trait ReachabilityClient: Send + Sync {
    fn probe(&self, url: &str) -> Result<u16, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "classification", rename_all = "snake_case")]
pub enum UrlClassification {
    Malicious,
    /// 4XX response, or [`UNREACHABLE_PROBE_FAILURE`] when the probe failed.
    Unreachable { status: u16 },
    /// Not blocklisted and not 4XX. Any status seen (including 5XX) is kept.
    Safe {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<u16>,
    },
}

impl UrlClassification {
    pub fn is_unsafe(&self) -> bool {
        !matches!(self, UrlClassification::Safe { .. })
    }
}

impl fmt::Display for UrlClassification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UrlClassification::Malicious => f.write_str("malicious"),
            UrlClassification::Unreachable { status } => write!(f, "unreachable (HTTP {status})"),
            UrlClassification::Safe { .. } => f.write_str("safe"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlFinding {
    pub url: String,
    #[serde(flatten)]
    pub classification: UrlClassification,
}

/// Blocklist first (malicious URLs are never probed), then reachability.
pub fn classify_url(
    url: &str,
    blocklist: &dyn BlocklistClient,
    reachability: &dyn ReachabilityClient,
) -> Result<UrlFinding, ClientError> {
    let classification = if blocklist.lookup(url)? {
        UrlClassification::Malicious
    } else {
        let status = reachability.probe(url)?;
        if (400..500).contains(&status) {
            UrlClassification::Unreachable { status }
        } else {
            UrlClassification::Safe {
                status: Some(status),
            }
        }
    };
    Ok(UrlFinding {
        url: url.to_string(),
        classification,
    })
}

/// Warning block for the unsafe findings, or `None` when all are safe.
pub fn render_warning(findings: &[UrlFinding]) -> Option<String> {
    let mut out = String::new();
    for f in findings.iter().filter(|f| f.classification.is_unsafe()) {
        if out.is_empty() {
            out.push_str(WARNING_HEADER);
        }
        out.push_str(&format!("- {} ({})\n", f.url, f.classification));
    }
    (!out.is_empty()).then_some(out)
}

/// What to do when the reachability probe errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFailurePolicy {
    /// Record the URL as unreachable with status 499.
    #[default]
    Unreachable,
    /// Leave the URL out of the findings.
    Skip,
}

/// Prepends a warning naming malicious or unreachable URLs.
///
/// Each distinct URL is classified once, in order of first appearance;
/// classification calls for different URLs run concurrently.
pub struct UrlWarningWrapper {
    blocklist: Arc<dyn BlocklistClient>,
    reachability: Arc<dyn ReachabilityClient>,
    probe_failure: ProbeFailurePolicy,
}

impl UrlWarningWrapper {
    pub fn new(blocklist: Arc<dyn BlocklistClient>, reachability: Arc<dyn ReachabilityClient>) -> Self {
        UrlWarningWrapper {
            blocklist,
            reachability,
            probe_failure: ProbeFailurePolicy::default(),
        }
    }

    pub fn with_probe_failure(mut self, policy: ProbeFailurePolicy) -> Self {
        self.probe_failure = policy;
        self
    }

    fn classify_one(&self, url: &str) -> Result<Option<UrlFinding>, ClientError> {
        match classify_url(url, self.blocklist.as_ref(), self.reachability.as_ref()) {
            Ok(f) => Ok(Some(f)),
            Err(e) if e.kind == ClientKind::Reachability => match self.probe_failure {
                ProbeFailurePolicy::Unreachable => Ok(Some(UrlFinding {
                    url: url.to_string(),
                    classification: UrlClassification::Unreachable {
                        status: UNREACHABLE_PROBE_FAILURE,
                    },
                })),
                ProbeFailurePolicy::Skip => Ok(None),
            },
            Err(e) => Err(e),
        }
    }

    /// Findings for the distinct URLs of `text`.
    pub fn findings(&self, text: &str) -> Result<Vec<UrlFinding>, ClientError> {
        let mut seen = HashSet::new();
        let urls: Vec<String> = extract_urls(text)
            .into_iter()
            .filter(|u| seen.insert(u.clone()))
            .collect();
        let results: Vec<Result<Option<UrlFinding>, ClientError>> = match urls.len() {
            0 => Vec::new(),
            1 => vec![self.classify_one(&urls[0])],
            _ => std::thread::scope(|s| {
                let handles: Vec<_> = urls
                    .iter()
                    .map(|u| s.spawn(move || self.classify_one(u)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("URL classification panicked"))
                    .collect()
            }),
        };
        results
            .into_iter()
            .filter_map(Result::transpose)
            .collect()
    }
}

impl Wrapper for UrlWarningWrapper {
    fn name(&self) -> &str {
        URL_WARNING_WRAPPER
    }

    fn apply(&self, text: &str, _annotations: &[Annotation]) -> Result<WrapperOutcome, WrapperError> {
        let findings = self.findings(text).map_err(|e| WrapperError(e.to_string()))?;
        let annotations = findings
            .iter()
            .map(|f| Annotation {
                wrapper_name: URL_WARNING_WRAPPER.to_string(),
                payload: serde_json::to_value(f).expect("finding serializes"),
            })
            .collect();
        Ok(match render_warning(&findings) {
            Some(warning) => WrapperOutcome {
                text: format!("{warning}\n\n{text}"),
                annotations,
                modified: true,
            },
            None => WrapperOutcome {
                text: text.to_string(),
                annotations,
                modified: false,
            },
        })
    }
}

/// In-memory blocklist of exact URLs.
#[derive(Debug, Default)]
pub struct StaticBlocklist {
    urls: HashSet<String>,
    calls: AtomicUsize,
}

impl StaticBlocklist {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(urls: I) -> Self {
        StaticBlocklist {
            urls: urls.into_iter().map(Into::into).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl BlocklistClient for StaticBlocklist {
    fn lookup(&self, url: &str) -> Result<bool, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.urls.contains(url))
    }
}

/// In-memory status table; unknown URLs answer `default_status`.
#[derive(Debug)]
pub struct StaticReachability {
    statuses: HashMap<String, u16>,
    failing: HashSet<String>,
    default_status: u16,
    calls: AtomicUsize,
}

impl Default for StaticReachability {
    fn default() -> Self {
        StaticReachability {
            statuses: HashMap::new(),
            failing: HashSet::new(),
            default_status: 200,
            calls: AtomicUsize::new(0),
        }
    }
}

impl StaticReachability {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_status(mut self, url: impl Into<String>, status: u16) -> Self {
        self.statuses.insert(url.into(), status);
        self
    }

    pub fn with_failure(mut self, url: impl Into<String>) -> Self {
        self.failing.insert(url.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ReachabilityClient for StaticReachability {
    fn probe(&self, url: &str) -> Result<u16, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if self.failing.contains(url) {
            return Err(ClientError {
                kind: ClientKind::Reachability,
                url: url.to_string(),
                message: "connection refused".into(),
            });
        }
        Ok(self.statuses.get(url).copied().unwrap_or(self.default_status))
    }
}

/// Blocklist loaded from a text file: one entry per line, `#` comments.
/// An entry containing `://` matches that exact URL; anything else is a
/// host name matching the host and its subdomains.
#[derive(Debug, Default, Clone)]
pub struct FileBlocklist {
    urls: HashSet<String>,
    hosts: HashSet<String>,
}

impl FileBlocklist {
    pub fn parse(contents: &str) -> Self {
        let mut list = FileBlocklist::default();
        for line in contents.lines() {
            let entry = line.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            if entry.contains("://") {
                list.urls.insert(entry.to_string());
            } else {
                list.hosts.insert(entry.trim_end_matches('.').to_ascii_lowercase());
            }
        }
        list
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.urls.len() + self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BlocklistClient for FileBlocklist {
    fn lookup(&self, url: &str) -> Result<bool, ClientError> {
        if self.urls.contains(url) {
            return Ok(true);
        }
        let parsed = ::url::Url::parse(url).map_err(|e| ClientError {
            kind: ClientKind::Blocklist,
            url: url.to_string(),
            message: e.to_string(),
        })?;
        let Some(host) = parsed.host_str() else {
            return Ok(false);
        };
        let host = host.to_ascii_lowercase();
        let mut suffix = host.as_str();
        loop {
            if self.hosts.contains(suffix) {
                return Ok(true);
            }
            match suffix.split_once('.') {
                Some((_, rest)) => suffix = rest,
                None => return Ok(false),
            }
        }
    }
}

/// Issues a GET and reports the final status after up to five redirects.
#[derive(Debug, Clone)]
pub struct HttpReachability {
    client: reqwest::blocking::Client,
}

impl HttpReachability {
    pub fn new(timeout: Duration) -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .redirect(reqwest::redirect::Policy::limited(MAX_REDIRECTS))
            .build()
            .map_err(|e| ClientError {
                kind: ClientKind::Reachability,
                url: String::new(),
                message: e.to_string(),
            })?;
        Ok(HttpReachability { client })
    }
}

impl ReachabilityClient for HttpReachability {
    fn probe(&self, url: &str) -> Result<u16, ClientError> {
        self.client
            .get(url)
            .send()
            .map(|r| r.status().as_u16())
            .map_err(|e| ClientError {
                kind: ClientKind::Reachability,
                url: url.to_string(),
                message: e.to_string(),
            })
    }
}
