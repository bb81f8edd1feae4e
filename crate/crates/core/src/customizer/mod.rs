//! Deterministic, model-free output wrappers applied after inference.
//!
//! A chain of [`Wrapper`]s runs in order; each sees the previous wrapper's
//! text and the annotations gathered so far. The shipped
//! [`UrlWarningWrapper`] checks URLs in the answer against a blocklist and a
//! reachability probe and prepends a warning listing the unsafe ones.

mod url;

pub use self::url::{
    classify_url, extract_urls, render_warning, BlocklistClient, ClientError, ClientKind,
    FileBlocklist, HttpReachability, ProbeFailurePolicy, ReachabilityClient, StaticBlocklist,
    StaticReachability, UrlClassification, UrlFinding, UrlWarningWrapper, UNREACHABLE_PROBE_FAILURE,
    URL_WARNING_WRAPPER,
};

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub wrapper_name: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperOutcome {
    pub text: String,
    pub annotations: Vec<Annotation>,
    /// `false` guarantees `text` is byte-identical to the input.
    pub modified: bool,
}

impl WrapperOutcome {
    pub fn unchanged(text: &str) -> Self {
        WrapperOutcome {
            text: text.to_string(),
            annotations: Vec::new(),
            modified: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct WrapperError(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("wrapper name `{0}` appears more than once in the chain")]
    DuplicateWrapperName(String),
    #[error("wrapper `{wrapper}` failed: {source}")]
    WrapperFailure {
        wrapper: String,
        #[source]
        source: WrapperError,
    },
}

pub trait Wrapper: Send + Sync {
    fn name(&self) -> &str;

    /// Transform `text`. Returned annotations are this wrapper's own; the
    /// chain concatenates them.
    fn apply(&self, text: &str, annotations: &[Annotation]) -> Result<WrapperOutcome, WrapperError>;
}

type WrapperFn = dyn Fn(&str, &[Annotation]) -> Result<WrapperOutcome, WrapperError> + Send + Sync;

/// A wrapper backed by a closure.
pub struct FnWrapper {
    name: String,
    f: Box<WrapperFn>,
}

impl FnWrapper {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&str, &[Annotation]) -> Result<WrapperOutcome, WrapperError> + Send + Sync + 'static,
    {
        FnWrapper {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

impl Wrapper for FnWrapper {
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, text: &str, annotations: &[Annotation]) -> Result<WrapperOutcome, WrapperError> {
        (self.f)(text, annotations)
    }
}

/// Apply `wrappers` in order.
pub fn run_chain(text: &str, wrappers: &[Arc<dyn Wrapper>]) -> Result<WrapperOutcome, ChainError> {
    let mut names = HashSet::with_capacity(wrappers.len());
    for w in wrappers {
        if !names.insert(w.name()) {
            return Err(ChainError::DuplicateWrapperName(w.name().to_string()));
        }
    }

    let mut current = WrapperOutcome::unchanged(text);
    for w in wrappers {
        let step = w
            .apply(&current.text, &current.annotations)
            .map_err(|source| ChainError::WrapperFailure {
                wrapper: w.name().to_string(),
                source,
            })?;
        current.modified |= step.modified;
        current.text = step.text;
        current.annotations.extend(step.annotations);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn appender(name: &'static str, marker: &'static str) -> Arc<dyn Wrapper> {
        Arc::new(FnWrapper::new(name, move |text, _| {
            Ok(WrapperOutcome {
                text: format!("{text}{marker}"),
                annotations: vec![Annotation {
                    wrapper_name: name.to_string(),
                    payload: serde_json::json!({ "appended": marker }),
                }],
                modified: true,
            })
        }))
    }

    #[test]
    fn empty_chain_is_identity() {
        let out = run_chain("hello", &[]).unwrap();
        assert_eq!(out, WrapperOutcome::unchanged("hello"));
    }

    #[test]
    fn wrappers_apply_in_order() {
        let out = run_chain("x", &[appender("a", "[A]"), appender("b", "[B]")]).unwrap();
        assert_eq!(out.text, "x[A][B]");
        assert!(out.modified);
        let names: Vec<_> = out.annotations.iter().map(|a| a.wrapper_name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn later_wrappers_see_earlier_annotations() {
        let counter: Arc<dyn Wrapper> = Arc::new(FnWrapper::new("count", |text, seen| {
            Ok(WrapperOutcome {
                text: format!("{text} ({} notes)", seen.len()),
                annotations: vec![],
                modified: true,
            })
        }));
        let out = run_chain("x", &[appender("a", "!"), counter]).unwrap();
        assert_eq!(out.text, "x! (1 notes)");
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = run_chain("x", &[appender("a", "1"), appender("a", "2")]).unwrap_err();
        assert_eq!(err, ChainError::DuplicateWrapperName("a".into()));
    }

    #[test]
    fn failure_names_the_wrapper() {
        let failing: Arc<dyn Wrapper> =
            Arc::new(FnWrapper::new("boom", |_, _| Err(WrapperError("exploded".into()))));
        let err = run_chain("x", &[appender("a", "1"), failing]).unwrap_err();
        assert!(matches!(err, ChainError::WrapperFailure { ref wrapper, .. } if wrapper == "boom"));
    }
}
