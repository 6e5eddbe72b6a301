//! Uniform access to model backends, tools and data sources.
//!
//! A [`ResourceDescriptor`] names a resource and its limits; [`Resolver`]
//! turns it into a [`ResourceHandle`] backed by the provider registered for
//! the descriptor's `(kind, scheme)` pair.

mod handle;
mod http;
mod mock;
mod resolve;
mod tools;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dnf::{truth_from_logits, truth_from_samples, DnfError};

pub use handle::{ModelProvider, ResourceHandle, ToolProvider};
pub use http::HttpProvider;
pub use mock::{FaultInjector, MockEntry, MockFixture, MockProvider};
pub use resolve::Resolver;
pub use tools::{builtin_tool, FieldType, ToolSchema};

/// Suffix appended to every yes/no question.
pub const YES_NO_SUFFIX: &str = "Answer exactly Yes or No.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Data,
    Model,
    Device,
    Tool,
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ResourceKind::Data => "data",
            ResourceKind::Model => "model",
            ResourceKind::Device => "device",
            ResourceKind::Tool => "tool",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub max_concurrent: usize,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_concurrent: 4,
            timeout_ms: 30_000,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDescriptor {
    pub resource_id: String,
    pub kind: ResourceKind,
    pub uri: String,
    /// Name of the environment variable holding the secret (an `env:` prefix is accepted).
    #[serde(default)]
    pub auth: Option<String>,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub supports_logprobs: bool,
    /// Model name sent to HTTP backends.
    #[serde(default)]
    pub model: Option<String>,
}

impl ResourceDescriptor {
    pub fn new(resource_id: impl Into<String>, kind: ResourceKind, uri: impl Into<String>) -> Self {
        Self {
            resource_id: resource_id.into(),
            kind,
            uri: uri.into(),
            auth: None,
            limits: Limits::default(),
            supports_logprobs: false,
            model: None,
        }
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    pub fn scheme(&self) -> &str {
        self.uri.split_once("://").map_or("", |(s, _)| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorClass {
    Timeout,
    Http,
    Parse,
}

impl fmt::Display for BackendErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BackendErrorClass::Timeout => "timeout",
            BackendErrorClass::Http => "http",
            BackendErrorClass::Parse => "parse",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ResourceError {
    #[error("no provider for {kind} resources with scheme `{scheme}`")]
    NoProvider { kind: ResourceKind, scheme: String },
    #[error("secret `{0}` is not set")]
    AuthMissing(String),
    #[error("backend error ({class}, retriable={retriable}): {message}")]
    Backend {
        class: BackendErrorClass,
        retriable: bool,
        message: String,
    },
    #[error("rate limited")]
    RateLimited,
    #[error("no parseable yes/no answers")]
    NoParseableAnswers,
    #[error("tool arguments do not match schema: {0}")]
    SchemaMismatch(String),
    #[error("tool failed: {0}")]
    ToolError(serde_json::Value),
    #[error("resource `{id}` is a {actual} resource, expected {expected}")]
    WrongKind {
        id: String,
        expected: ResourceKind,
        actual: ResourceKind,
    },
    #[error("invalid resource catalog: {0}")]
    InvalidCatalog(String),
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
}

impl ResourceError {
    pub fn backend(class: BackendErrorClass, retriable: bool, message: impl Into<String>) -> Self {
        ResourceError::Backend {
            class,
            retriable,
            message: message.into(),
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, ResourceError::RateLimited | ResourceError::Backend { retriable: true, .. })
    }

    /// Short class string used in event payloads.
    pub fn class(&self) -> &'static str {
        match self {
            ResourceError::Backend { class: BackendErrorClass::Timeout, .. } => "timeout",
            ResourceError::Backend { class: BackendErrorClass::Http, .. } => "http",
            ResourceError::Backend { class: BackendErrorClass::Parse, .. } => "parse",
            ResourceError::RateLimited => "rate_limited",
            ResourceError::NoProvider { .. } => "no_provider",
            ResourceError::AuthMissing(_) => "auth_missing",
            ResourceError::NoParseableAnswers => "no_parseable_answers",
            ResourceError::SchemaMismatch(_) => "schema_mismatch",
            ResourceError::ToolError(_) => "tool_error",
            ResourceError::WrongKind { .. } => "wrong_kind",
            ResourceError::InvalidCatalog(_) => "invalid_catalog",
            ResourceError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogits {
    pub token: String,
    pub alternatives: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logits: Option<Vec<TokenLogits>>,
    pub usage: Usage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub n_samples: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 1024,
            seed: None,
            n_samples: 1,
        }
    }
}

impl GenerationParams {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn with_samples(mut self, n: u32) -> Self {
        self.n_samples = n;
        self
    }

    /// Params for the `i`-th independent sample: the seed is offset by `i`.
    pub fn for_sample(&self, i: u32) -> Self {
        Self {
            seed: Some(self.seed.unwrap_or(0).wrapping_add(u64::from(i))),
            n_samples: 1,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum GenerationOutput {
    Single(Completion),
    Samples { completions: Vec<Completion> },
}

impl GenerationOutput {
    /// The first (or only) completion.
    pub fn first(&self) -> &Completion {
        match self {
            GenerationOutput::Single(c) => c,
            GenerationOutput::Samples { completions } => &completions[0],
        }
    }

    pub fn texts(&self) -> Vec<&str> {
        match self {
            GenerationOutput::Single(c) => vec![c.text.as_str()],
            GenerationOutput::Samples { completions } => completions.iter().map(|c| c.text.as_str()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum YesNoEvidence {
    Logits { v_yes: f64, v_no: f64 },
    Counts { m_yes: u64, m_no: u64, unparseable: u64 },
}

impl YesNoEvidence {
    pub fn truth(&self) -> Result<f64, DnfError> {
        match *self {
            YesNoEvidence::Logits { v_yes, v_no } => truth_from_logits(v_yes, v_no),
            YesNoEvidence::Counts { m_yes, m_no, .. } => truth_from_samples(m_yes, m_no),
        }
    }
}

/// Parses a single sampled reply as yes or no.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let word = reply
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// The resource catalog file: a JSON list of descriptors with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceCatalog {
    descriptors: Vec<ResourceDescriptor>,
}

impl ResourceCatalog {
    pub fn new(descriptors: Vec<ResourceDescriptor>) -> Result<Self, ResourceError> {
        let mut seen = BTreeSet::new();
        for d in &descriptors {
            if !seen.insert(d.resource_id.as_str()) {
                return Err(ResourceError::InvalidCatalog(format!(
                    "duplicate resource id `{}`",
                    d.resource_id
                )));
            }
            if d.limits.max_concurrent == 0 || d.limits.timeout_ms == 0 {
                return Err(ResourceError::InvalidCatalog(format!(
                    "`{}`: max_concurrent and timeout must be positive",
                    d.resource_id
                )));
            }
        }
        Ok(Self { descriptors })
    }

    pub fn from_json(text: &str) -> Result<Self, ResourceError> {
        let descriptors: Vec<ResourceDescriptor> =
            serde_json::from_str(text).map_err(|e| ResourceError::InvalidCatalog(e.to_string()))?;
        Self::new(descriptors)
    }

    pub fn load(path: &Path) -> Result<Self, ResourceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ResourceError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn get(&self, resource_id: &str) -> Option<&ResourceDescriptor> {
        self.descriptors.iter().find(|d| d.resource_id == resource_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ResourceDescriptor> {
        self.descriptors.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no(" Yes."), Some(true));
        assert_eq!(parse_yes_no("NO"), Some(false));
        assert_eq!(parse_yes_no("maybe"), None);
        assert_eq!(parse_yes_no("yes, definitely"), None);
    }

    #[test]
    fn evidence_truth() {
        let e = YesNoEvidence::Counts { m_yes: 3, m_no: 1, unparseable: 0 };
        assert!((e.truth().unwrap() - 0.5).abs() < 1e-12);
        let e = YesNoEvidence::Logits { v_yes: 3f64.ln(), v_no: 0.0 };
        assert!((e.truth().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn catalog_rejects_duplicates() {
        let d = ResourceDescriptor::new("m", ResourceKind::Model, "mock://x");
        assert!(ResourceCatalog::new(vec![d.clone(), d]).is_err());
        let text = r#"[{"resource_id":"m","kind":"model","uri":"mock://a","limits":{"max_concurrent":2,"timeout_ms":100,"max_retries":0}}]"#;
        let c = ResourceCatalog::from_json(text).unwrap();
        assert_eq!(c.get("m").unwrap().limits.max_concurrent, 2);
        assert_eq!(c.get("m").unwrap().scheme(), "mock");
    }

    #[test]
    fn sample_params_offset_seed() {
        let p = GenerationParams::seeded(10).with_samples(4);
        assert_eq!(p.for_sample(3).seed, Some(13));
        assert_eq!(p.for_sample(3).n_samples, 1);
    }
}
