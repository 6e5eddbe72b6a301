//! The six operator modules the engine dispatches into, plus the versioned
//! state store and memory store they share.

mod dispatch;
mod memory;
mod output;
mod reason;
mod security;
mod store;
mod tune;

use thiserror::Error;

use crate::engine::DispatchError;
use crate::resources::ResourceError;

pub use dispatch::StandardDispatcher;
pub use memory::{MemoryFilter, MemoryKind, MemoryRecord, MemoryStore};
pub use output::{validate_output, FieldRule, JsonType, OutputSchema, OutputViolation, SemanticRule};
pub use reason::{parse_cot, reason, ReasoningInput, ReasoningMode, ReasoningTrace, COT_SUFFIX};
pub use security::{authorize, Action, Capability, Decision, DenyReason};
pub use store::{ChainEntry, DocumentStore, FsStore, InMemoryStore, VersionTag, VersionedDocument};
pub use tune::{tune, Outcome, TaskMetrics, TaskPolicy};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("key `{0}` already exists")]
    KeyExists(String),
    #[error("key `{0}` not found")]
    KeyNotFound(String),
    #[error("version {version} of `{key}` not found")]
    VersionNotFound { key: String, version: VersionTag },
    #[error("stale parent {parent} for `{key}`; head is {head}")]
    StaleParent { key: String, parent: VersionTag, head: VersionTag },
    #[error("invalid key `{0}`")]
    InvalidKey(String),
    #[error("invalid version tag `{0}`")]
    InvalidVersion(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
    #[error("invalid capability: {0}")]
    InvalidCapability(String),
    #[error(transparent)]
    Backend(#[from] ResourceError),
    #[error("no answer line in reasoning trace for `{0}`")]
    UnparseableTrace(String),
    #[error("capability denied ({reason}) for {action:?} on `{resource}`")]
    CapabilityDenied { resource: String, action: Action, reason: DenyReason },
    #[error("no registered agent offers {0:?}")]
    NoAgentFound(Vec<String>),
    #[error("operator exceeded {0} ms")]
    OperatorTimeout(u64),
    #[error("agent `{agent}` failed: {message}")]
    Agent { agent: String, message: String },
    #[error("invalid node parameters: {0}")]
    InvalidParams(String),
}

impl OperatorError {
    pub fn class(&self) -> &'static str {
        match self {
            OperatorError::KeyExists(_) => "key_exists",
            OperatorError::KeyNotFound(_) => "key_not_found",
            OperatorError::VersionNotFound { .. } => "version_not_found",
            OperatorError::StaleParent { .. } => "stale_parent",
            OperatorError::InvalidKey(_) => "invalid_key",
            OperatorError::InvalidVersion(_) => "invalid_version",
            OperatorError::Corrupt(_) => "corrupt",
            OperatorError::Io(_) => "io",
            OperatorError::InvalidCapability(_) => "invalid_capability",
            OperatorError::Backend(_) => "backend",
            OperatorError::UnparseableTrace(_) => "unparseable_trace",
            OperatorError::CapabilityDenied { .. } => "capability_denied",
            OperatorError::NoAgentFound(_) => "no_agent_found",
            OperatorError::OperatorTimeout(_) => "operator_timeout",
            OperatorError::Agent { .. } => "agent",
            OperatorError::InvalidParams(_) => "invalid_params",
        }
    }

    /// Whether re-running the node may succeed.
    pub fn is_retriable(&self) -> bool {
        match self {
            OperatorError::Backend(e) => e.is_retriable(),
            OperatorError::UnparseableTrace(_)
            | OperatorError::StaleParent { .. }
            | OperatorError::OperatorTimeout(_)
            | OperatorError::Io(_) => true,
            OperatorError::Agent { .. } => true,
            _ => false,
        }
    }
}

impl From<OperatorError> for DispatchError {
    fn from(e: OperatorError) -> Self {
        DispatchError::new(e.class(), e.to_string(), e.is_retriable())
    }
}
