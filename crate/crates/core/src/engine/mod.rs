//! Planning, execution, monitoring and strategy adaptation for workflow
//! instances.
//!
//! [`execute`] runs an event-driven ready queue: a node starts as soon as all
//! of its dependencies have succeeded, at most `strategy.parallelism` node
//! bodies run at once, and every state change is appended to the instance's
//! event log by the engine loop alone.

mod clock;
mod execute;
mod monitor;
mod plan;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::operators::Capability;
use crate::workflow::{OperatorKind, ValidationReport, WorkflowSpec};

pub use clock::{Clock, ManualClock, SystemClock};
pub use execute::{backoff_delay_ms, execute, ExecuteOptions};
pub use monitor::{monitor_snapshot, nearest_rank, optimize, MetricsSummary, NodeMetrics, OptimizerConfig};
pub use plan::{plan, PlannerOutput};

pub type Payload = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("workflow has a cycle: {}", .0.join(" -> "))]
    CyclicSpec(Vec<String>),
    #[error("workflow is invalid: {0}")]
    InvalidSpec(ValidationReport),
    #[error("no operator registered for `{0}`")]
    DispatchUnresolvable(OperatorKind),
    #[error("instance `{0}` has already run")]
    NotFresh(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    #[default]
    Pending,
    Ready,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl NodeStatus {
    pub const ALL: [NodeStatus; 6] = [
        NodeStatus::Pending,
        NodeStatus::Ready,
        NodeStatus::Running,
        NodeStatus::Succeeded,
        NodeStatus::Failed,
        NodeStatus::Cancelled,
    ];

    pub fn is_terminal(&self) -> bool {
        matches!(self, NodeStatus::Succeeded | NodeStatus::Failed | NodeStatus::Cancelled)
    }

    pub fn can_become(&self, next: NodeStatus) -> bool {
        use NodeStatus::*;
        matches!(
            (self, next),
            (Pending, Ready) | (Ready, Running) | (Running, Succeeded) | (Running, Failed) | (Failed, Ready)
        ) || (next == Cancelled && !self.is_terminal())
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            NodeStatus::Pending => "pending",
            NodeStatus::Ready => "ready",
            NodeStatus::Running => "running",
            NodeStatus::Succeeded => "succeeded",
            NodeStatus::Failed => "failed",
            NodeStatus::Cancelled => "cancelled",
        }
    }
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    pub status: NodeStatus,
    pub attempts: u32,
    pub started_at: Option<u64>,
    pub ended_at: Option<u64>,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Scheduled,
    Started,
    Succeeded,
    Failed,
    Retried,
    Cancelled,
    Validated,
    Violation,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Scheduled => "scheduled",
            EventKind::Started => "started",
            EventKind::Succeeded => "succeeded",
            EventKind::Failed => "failed",
            EventKind::Retried => "retried",
            EventKind::Cancelled => "cancelled",
            EventKind::Validated => "validated",
            EventKind::Violation => "violation",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Payload key distinguishing node-level retries (`node`) from retries
/// inside an operator (`operation`).
pub const SCOPE: &str = "scope";
pub const SCOPE_NODE: &str = "node";
pub const SCOPE_OPERATION: &str = "operation";

/// One entry of the append-only event log. `ts` is in microseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionEvent {
    pub seq: u64,
    pub ts: u64,
    pub node_id: String,
    pub kind: EventKind,
    pub payload: Payload,
}

impl ExecutionEvent {
    /// True for the node-level retry events written by the engine.
    pub fn is_node_retry(&self) -> bool {
        self.kind == EventKind::Retried && self.payload.get(SCOPE).map(String::as_str) == Some(SCOPE_NODE)
    }
}

/// Newline-delimited JSON, one event per line.
pub fn events_to_ndjson(events: &[ExecutionEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

pub fn events_from_ndjson(text: &str) -> Result<Vec<ExecutionEvent>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub parallelism: usize,
    /// Node-level retries allowed across the whole instance.
    pub retry_budget: u32,
    pub backoff_scale: f64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            parallelism: crate::workflow::DEFAULT_CONCURRENCY_CAP,
            retry_budget: 64,
            backoff_scale: 1.0,
        }
    }
}

impl StrategyParams {
    pub fn check(&self, concurrency_cap: usize) -> Result<(), EngineError> {
        if self.parallelism < 1 || self.parallelism > concurrency_cap {
            return Err(EngineError::InvalidStrategy(format!(
                "parallelism {} outside [1, {concurrency_cap}]",
                self.parallelism
            )));
        }
        if !(self.backoff_scale > 0.0 && self.backoff_scale.is_finite()) {
            return Err(EngineError::InvalidStrategy("backoff_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowInstance {
    pub instance_id: String,
    pub spec: WorkflowSpec,
    pub node_states: BTreeMap<String, NodeState>,
    pub strategy: StrategyParams,
    pub event_log: Vec<ExecutionEvent>,
}

impl WorkflowInstance {
    pub fn new(instance_id: impl Into<String>, spec: WorkflowSpec, strategy: StrategyParams) -> Result<Self, EngineError> {
        strategy.check(spec.concurrency_cap)?;
        let node_states = spec.nodes.iter().map(|n| (n.node_id.clone(), NodeState::default())).collect();
        Ok(Self {
            instance_id: instance_id.into(),
            spec,
            node_states,
            strategy,
            event_log: Vec::new(),
        })
    }

    pub fn is_terminal(&self) -> bool {
        self.node_states.values().all(|s| s.status.is_terminal())
    }

    pub fn is_fresh(&self) -> bool {
        self.event_log.is_empty() && self.node_states.values().all(|s| *s == NodeState::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowResult {
    pub instance: WorkflowInstance,
    pub outputs: BTreeMap<String, Value>,
    /// Terminal error message per failed node.
    pub failures: BTreeMap<String, String>,
}

impl WorkflowResult {
    pub fn all_succeeded(&self) -> bool {
        self.instance
            .node_states
            .values()
            .all(|s| s.status == NodeStatus::Succeeded)
    }
}

/// Successful node output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub output: Value,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl TaskResult {
    pub fn new(output: Value) -> Self {
        Self {
            output,
            metrics: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{class}: {message}")]
pub struct DispatchError {
    pub class: String,
    pub message: String,
    pub retriable: bool,
}

impl DispatchError {
    pub fn new(class: impl Into<String>, message: impl Into<String>, retriable: bool) -> Self {
        Self {
            class: class.into(),
            message: message.into(),
            retriable,
        }
    }
}

/// Event emitted from inside a running node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEvent {
    pub node_id: String,
    pub kind: EventKind,
    pub payload: Payload,
}

pub type EventSink = Arc<dyn Fn(NodeEvent) + Send + Sync>;

/// What a node body can see while it runs.
#[derive(Clone)]
pub struct ExecutionContext {
    pub instance_id: String,
    pub node_id: String,
    pub attempt: u32,
    pub seed: u64,
    /// Outputs of every ancestor of the node, keyed by node id.
    pub inputs: BTreeMap<String, Value>,
    pub principal: String,
    pub capabilities: Arc<[Capability]>,
    sink: EventSink,
}

impl fmt::Debug for ExecutionContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExecutionContext")
            .field("node_id", &self.node_id)
            .field("attempt", &self.attempt)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl ExecutionContext {
    pub fn new(node_id: impl Into<String>, sink: EventSink) -> Self {
        Self {
            instance_id: String::new(),
            node_id: node_id.into(),
            attempt: 1,
            seed: 0,
            inputs: BTreeMap::new(),
            principal: String::new(),
            capabilities: Arc::from(Vec::new()),
            sink,
        }
    }

    /// A context whose events are collected into the returned log, for
    /// running operators outside the engine.
    pub fn collecting(node_id: impl Into<String>) -> (Self, Arc<RwLock<Vec<NodeEvent>>>) {
        let log = Arc::new(RwLock::new(Vec::new()));
        let sink_log = Arc::clone(&log);
        let sink: EventSink = Arc::new(move |e| sink_log.write().unwrap().push(e));
        (Self::new(node_id, sink), log)
    }

    pub fn with_capabilities(mut self, principal: impl Into<String>, caps: Vec<Capability>) -> Self {
        self.principal = principal.into();
        self.capabilities = Arc::from(caps);
        self
    }

    pub fn with_inputs(mut self, inputs: BTreeMap<String, Value>) -> Self {
        self.inputs = inputs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn emit(&self, kind: EventKind, payload: Payload) {
        (self.sink)(NodeEvent {
            node_id: self.node_id.clone(),
            kind,
            payload,
        });
    }

    /// Input from an ancestor node.
    pub fn input(&self, node_id: &str) -> Option<&Value> {
        self.inputs.get(node_id)
    }
}

/// Routes nodes to operator implementations.
pub trait OperatorDispatcher: Send + Sync {
    fn supports(&self, kind: OperatorKind) -> bool;
    fn dispatch(&self, node: &crate::workflow::TaskNode, ctx: &ExecutionContext) -> Result<TaskResult, DispatchError>;
}

/// Read-only view of a running instance's event log, safe to poll from
/// other threads.
#[derive(Debug, Clone, Default)]
pub struct LogView {
    events: Arc<RwLock<Vec<ExecutionEvent>>>,
}

impl LogView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<ExecutionEvent> {
        self.events.read().unwrap().clone()
    }

    pub(crate) fn push(&self, e: ExecutionEvent) {
        self.events.write().unwrap().push(e);
    }
}

/// Convenience for building payloads from pairs.
pub fn payload<K: Into<String>, V: ToString>(pairs: impl IntoIterator<Item = (K, V)>) -> Payload {
    pairs.into_iter().map(|(k, v)| (k.into(), v.to_string())).collect()
}
