use std::fmt;

use hawk_core::creagentive::CreagentiveError;
use hawk_core::dnf::DnfError;
use hawk_core::engine::EngineError;
use hawk_core::operators::OperatorError;
use hawk_core::registry::RegistryError;
use hawk_core::resources::ResourceError;
use hawk_core::workflow::WorkflowError;
use serde_json::{json, Value};

pub const DOMAIN: u8 = 1;
pub const USAGE: u8 = 2;
pub const ENVIRONMENT: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub class: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, class: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            class: class.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::new(ENVIRONMENT, "io", format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> Value {
        json!({"error": {"code": self.code, "class": self.class, "message": self.message}})
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Backend error classes that point at the machine rather than the input.
fn environmental(class: &str) -> bool {
    matches!(class, "timeout" | "http" | "auth_missing" | "no_provider" | "io" | "rate_limited")
}

impl From<WorkflowError> for CliError {
    fn from(e: WorkflowError) -> Self {
        let code = match e {
            WorkflowError::Io { .. } => ENVIRONMENT,
            _ => DOMAIN,
        };
        Self::new(code, "workflow", e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::InvalidStrategy(_) => USAGE,
            _ => DOMAIN,
        };
        Self::new(code, "engine", e.to_string())
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        let code = match e {
            RegistryError::EndpointUnreachable { .. } | RegistryError::Persist { .. } => ENVIRONMENT,
            _ => DOMAIN,
        };
        Self::new(code, "registry", e.to_string())
    }
}

impl From<DnfError> for CliError {
    fn from(e: DnfError) -> Self {
        Self::new(DOMAIN, "dnf", e.to_string())
    }
}

impl From<ResourceError> for CliError {
    fn from(e: ResourceError) -> Self {
        let code = if environmental(e.class()) || matches!(e, ResourceError::InvalidCatalog(_)) {
            ENVIRONMENT
        } else {
            DOMAIN
        };
        Self::new(code, e.class(), e.to_string())
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        let code = if e.class() == "io" { ENVIRONMENT } else { DOMAIN };
        Self::new(code, e.class(), e.to_string())
    }
}

impl From<CreagentiveError> for CliError {
    fn from(e: CreagentiveError) -> Self {
        let code = match &e {
            CreagentiveError::MissingFile(_) | CreagentiveError::Io(_) => ENVIRONMENT,
            CreagentiveError::InvalidConfig(_) => USAGE,
            CreagentiveError::Backend(b) if environmental(b.class()) => ENVIRONMENT,
            CreagentiveError::Store(s) if s.class() == "io" => ENVIRONMENT,
            // node failures carry the dispatch error as `<class>: <message>`
            CreagentiveError::NodeFailed { message, .. }
                if message.split_once(':').is_some_and(|(class, _)| environmental(class)) =>
            {
                ENVIRONMENT
            }
            _ => DOMAIN,
        };
        Self::new(code, e.class(), e.to_string())
    }
}
