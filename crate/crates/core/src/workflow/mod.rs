//! Declarative workflow data model and the task-request front end.
//!
//! A [`TaskRequest`] is parsed into a [`TaskSpec`] by keyword matching over
//! the [`TemplateCatalog`], then instantiated into a [`WorkflowSpec`]: a DAG
//! of [`TaskNode`]s that the engine can plan and execute.

mod parse;
mod template;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use parse::parse_task_request;
pub use template::{instantiate_workflow, ParamDecl, ParamType, TemplateCatalog, WorkflowTemplate};
pub use validate::{topological_order, validate_workflow, ValidationReport, Violation};

pub const DEFAULT_CONCURRENCY_CAP: usize = 5;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("no workflow template matches the request")]
    UnrecognizedTaskKind,
    #[error("option `{name}` is malformed: {reason}")]
    MalformedOption { name: String, reason: String },
    #[error("template `{0}` not found")]
    TemplateNotFound(String),
    #[error("unresolved placeholders: {}", .0.join(", "))]
    UnresolvedPlaceholder(Vec<String>),
    #[error("instantiated workflow is invalid: {0}")]
    InvalidWorkflow(ValidationReport),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse `{path}`: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Raw user input before parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub raw_text: String,
    #[serde(default)]
    pub options: BTreeMap<String, String>,
}

impl TaskRequest {
    pub fn new(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            options: BTreeMap::new(),
        }
    }

    pub fn with_option(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.options.insert(key.into(), value.into());
        self
    }
}

/// Normalized task produced from a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: String,
    pub parameters: BTreeMap<String, Value>,
    #[serde(default)]
    pub constraints: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Environment,
    Memory,
    TaskManagement,
    TaskOptimizer,
    Reasoning,
    Security,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 6] = [
        OperatorKind::Environment,
        OperatorKind::Memory,
        OperatorKind::TaskManagement,
        OperatorKind::TaskOptimizer,
        OperatorKind::Reasoning,
        OperatorKind::Security,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OperatorKind::Environment => "environment",
            OperatorKind::Memory => "memory",
            OperatorKind::TaskManagement => "task-management",
            OperatorKind::TaskOptimizer => "task-optimizer",
            OperatorKind::Reasoning => "reasoning",
            OperatorKind::Security => "security",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Retry behaviour for one node. `backoff_base` is in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(rename = "backoff_base")]
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 1,
            backoff_base_ms: 10,
            backoff_factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, backoff_base_ms: u64, backoff_factor: f64) -> Self {
        Self {
            max_attempts,
            backoff_base_ms,
            backoff_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskNode {
    pub node_id: String,
    pub operator_kind: OperatorKind,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default)]
    pub retry_policy: RetryPolicy,
}

impl TaskNode {
    pub fn new(node_id: impl Into<String>, operator_kind: OperatorKind) -> Self {
        Self {
            node_id: node_id.into(),
            operator_kind,
            params: BTreeMap::new(),
            depends_on: Vec::new(),
            retry_policy: RetryPolicy::default(),
        }
    }

    pub fn depends_on<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.depends_on = deps.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: Value) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.retry_policy = policy;
        self
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(Value::as_str)
    }
}

fn default_cap() -> usize {
    DEFAULT_CONCURRENCY_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub spec_id: String,
    #[serde(default = "default_cap")]
    pub concurrency_cap: usize,
    pub nodes: Vec<TaskNode>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl WorkflowSpec {
    pub fn new(spec_id: impl Into<String>, nodes: Vec<TaskNode>) -> Self {
        Self {
            spec_id: spec_id.into(),
            concurrency_cap: DEFAULT_CONCURRENCY_CAP,
            nodes,
            metadata: BTreeMap::new(),
        }
    }

    pub fn node(&self, node_id: &str) -> Option<&TaskNode> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, WorkflowError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorkflowError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| WorkflowError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}
