use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::OperatorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Read,
    Write,
    Invoke,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Read => "read",
            Action::Write => "write",
            Action::Invoke => "invoke",
        })
    }
}

impl std::str::FromStr for Action {
    type Err = OperatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(Action::Read),
            "write" => Ok(Action::Write),
            "invoke" => Ok(Action::Invoke),
            _ => Err(OperatorError::InvalidCapability(format!("unknown action `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawCapability {
    principal: String,
    resource_pattern: String,
    actions: BTreeSet<Action>,
    #[serde(default)]
    expiry: Option<u64>,
}

/// A grant of `actions` on resources matching `resource_pattern` (a glob)
/// to `principal` (`*` for anyone), valid until `expiry` (microseconds).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCapability", into = "RawCapability")]
pub struct Capability {
    principal: String,
    resource_pattern: String,
    actions: BTreeSet<Action>,
    expiry: Option<u64>,
}

impl TryFrom<RawCapability> for Capability {
    type Error = OperatorError;

    fn try_from(r: RawCapability) -> Result<Self, Self::Error> {
        Capability::new(r.principal, r.resource_pattern, r.actions, r.expiry)
    }
}

impl From<Capability> for RawCapability {
    fn from(c: Capability) -> Self {
        RawCapability {
            principal: c.principal,
            resource_pattern: c.resource_pattern,
            actions: c.actions,
            expiry: c.expiry,
        }
    }
}

impl Capability {
    pub fn new(
        principal: impl Into<String>,
        resource_pattern: impl Into<String>,
        actions: impl IntoIterator<Item = Action>,
        expiry: Option<u64>,
    ) -> Result<Self, OperatorError> {
        let actions: BTreeSet<Action> = actions.into_iter().collect();
        if actions.is_empty() {
            return Err(OperatorError::InvalidCapability("empty action set".into()));
        }
        let resource_pattern = resource_pattern.into();
        glob::Pattern::new(&resource_pattern)
            .map_err(|e| OperatorError::InvalidCapability(format!("bad pattern `{resource_pattern}`: {e}")))?;
        Ok(Self {
            principal: principal.into(),
            resource_pattern,
            actions,
            expiry,
        })
    }

    /// Everything, for everyone, forever.
    pub fn allow_all() -> Self {
        Self::new("*", "*", [Action::Read, Action::Write, Action::Invoke], None).expect("valid")
    }

    pub fn principal(&self) -> &str {
        &self.principal
    }

    pub fn resource_pattern(&self) -> &str {
        &self.resource_pattern
    }

    pub fn actions(&self) -> &BTreeSet<Action> {
        &self.actions
    }

    pub fn expiry(&self) -> Option<u64> {
        self.expiry
    }

    /// Number of checks passed before the first failure, and that failure.
    fn evaluate(&self, principal: &str, resource_id: &str, action: Action, now: u64) -> (usize, Option<DenyReason>) {
        if self.principal != "*" && self.principal != principal {
            return (0, Some(DenyReason::Principal));
        }
        let matches = glob::Pattern::new(&self.resource_pattern).is_ok_and(|p| p.matches(resource_id));
        if !matches {
            return (1, Some(DenyReason::Pattern));
        }
        if !self.actions.contains(&action) {
            return (2, Some(DenyReason::Action));
        }
        if self.expiry.is_some_and(|t| now >= t) {
            return (3, Some(DenyReason::Expiry));
        }
        (4, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    Principal,
    Pattern,
    Action,
    Expiry,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenyReason::Principal => "principal",
            DenyReason::Pattern => "pattern",
            DenyReason::Action => "action",
            DenyReason::Expiry => "expiry",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

/// Allows iff some capability passes every check (principal, pattern,
/// action, expiry, in that order). A denial reports the failing check of
/// the capability that got furthest.
pub fn authorize(caps: &[Capability], principal: &str, resource_id: &str, action: Action, now: u64) -> Decision {
    let mut best = (0, DenyReason::Principal);
    for c in caps {
        match c.evaluate(principal, resource_id, action, now) {
            (_, None) => return Decision::Allow,
            (depth, Some(reason)) if depth > best.0 => best = (depth, reason),
            _ => {}
        }
    }
    Decision::Deny(best.1)
}
