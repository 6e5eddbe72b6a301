use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::{
    authorize, reason, tune, Action, Decision, DocumentStore, InMemoryStore, MemoryFilter, MemoryKind, MemoryStore,
    OperatorError, ReasoningInput, ReasoningMode, TaskMetrics, TaskPolicy, VersionTag,
};
use crate::engine::{payload, DispatchError, EventKind, ExecutionContext, OperatorDispatcher, TaskResult};
use crate::registry::{AgentRegistry, DiscoveryQuery};
use crate::resources::{GenerationParams, ResourceHandle};
use crate::workflow::{OperatorKind, TaskNode};

/// Parameters every node may carry regardless of kind.
const COMMON_PARAMS: [&str; 4] = ["simulate", "timeout_ms", "resource", "action"];

/// Routes nodes to the built-in operators by `operator_kind`.
///
/// Common parameters: `simulate` (`fail_times`, `fail_always`, `sleep_ms`,
/// `output`) for scripted behaviour, `timeout_ms` to bound the operator, and
/// `resource`/`action` for a capability check before anything runs. A node
/// with no operator parameters succeeds with `{"node_id": ..}`.
#[derive(Clone)]
pub struct StandardDispatcher {
    store: Arc<dyn DocumentStore>,
    memory: Arc<MemoryStore>,
    registry: Arc<AgentRegistry>,
    resources: Arc<BTreeMap<String, ResourceHandle>>,
}

impl Default for StandardDispatcher {
    fn default() -> Self {
        Self::new()
    }
}

impl StandardDispatcher {
    pub fn new() -> Self {
        Self {
            store: Arc::new(InMemoryStore::new()),
            memory: Arc::new(MemoryStore::new()),
            registry: Arc::new(AgentRegistry::new()),
            resources: Arc::new(BTreeMap::new()),
        }
    }

    pub fn with_store(mut self, store: Arc<dyn DocumentStore>) -> Self {
        self.store = store;
        self
    }

    pub fn with_memory(mut self, memory: Arc<MemoryStore>) -> Self {
        self.memory = memory;
        self
    }

    pub fn with_registry(mut self, registry: Arc<AgentRegistry>) -> Self {
        self.registry = registry;
        self
    }

    pub fn with_resource(mut self, handle: ResourceHandle) -> Self {
        Arc::make_mut(&mut self.resources).insert(handle.id().to_string(), handle);
        self
    }

    pub fn store(&self) -> &Arc<dyn DocumentStore> {
        &self.store
    }

    pub fn memory(&self) -> &Arc<MemoryStore> {
        &self.memory
    }

    pub fn registry(&self) -> &Arc<AgentRegistry> {
        &self.registry
    }

    pub fn resource(&self, id: &str) -> Result<&ResourceHandle, OperatorError> {
        self.resources
            .get(id)
            .ok_or_else(|| OperatorError::InvalidParams(format!("unknown resource `{id}`")))
    }

    /// Runs the node body with the security and timeout wrappers applied.
    pub fn run(&self, node: &TaskNode, ctx: &ExecutionContext) -> Result<TaskResult, OperatorError> {
        if let Some(resource) = node.param_str("resource") {
            let action = match node.param_str("action") {
                Some(a) => a.parse()?,
                None => default_action(node),
            };
            self.guard(ctx, resource, action)?;
        }
        match node.params.get("timeout_ms").and_then(Value::as_u64) {
            Some(ms) => {
                let (tx, rx) = mpsc::channel();
                let (this, node, ctx2) = (self.clone(), node.clone(), ctx.clone());
                std::thread::spawn(move || {
                    let _ = tx.send(this.body(&node, &ctx2));
                });
                rx.recv_timeout(Duration::from_millis(ms))
                    .unwrap_or(Err(OperatorError::OperatorTimeout(ms)))
            }
            None => self.body(node, ctx),
        }
    }

    /// Authorizes `action` on `resource` for the context's principal; a
    /// denial is also emitted as a violation event.
    pub fn guard(&self, ctx: &ExecutionContext, resource: &str, action: Action) -> Result<(), OperatorError> {
        match authorize(&ctx.capabilities, &ctx.principal, resource, action, now_micros()) {
            Decision::Allow => Ok(()),
            Decision::Deny(reason) => {
                ctx.emit(
                    EventKind::Violation,
                    payload([
                        ("code", "capability_denied".to_string()),
                        ("reason", reason.to_string()),
                        ("resource", resource.to_string()),
                        ("action", action.to_string()),
                    ]),
                );
                Err(OperatorError::CapabilityDenied {
                    resource: resource.to_string(),
                    action,
                    reason,
                })
            }
        }
    }

    fn body(&self, node: &TaskNode, ctx: &ExecutionContext) -> Result<TaskResult, OperatorError> {
        if let Some(sim) = node.params.get("simulate") {
            if let Some(out) = simulate(sim, ctx)? {
                return Ok(TaskResult::new(out));
            }
        }
        if node.params.keys().all(|k| COMMON_PARAMS.contains(&k.as_str())) {
            return Ok(TaskResult::new(json!({ "node_id": node.node_id })));
        }
        let output = match node.operator_kind {
            OperatorKind::Environment => self.environment(node)?,
            OperatorKind::Memory => self.memory_op(node)?,
            OperatorKind::Reasoning => self.reasoning(node, ctx)?,
            OperatorKind::TaskManagement => self.task_management(node, ctx)?,
            OperatorKind::TaskOptimizer => self.optimizer(node)?,
            OperatorKind::Security => self.security(node, ctx)?,
        };
        Ok(TaskResult::new(output))
    }

    fn environment(&self, node: &TaskNode) -> Result<Value, OperatorError> {
        let key = required_str(node, "key")?;
        let body = || -> Result<Vec<u8>, OperatorError> {
            match node.params.get("body") {
                Some(Value::String(s)) => Ok(s.clone().into_bytes()),
                Some(v) => Ok(v.to_string().into_bytes()),
                None => Err(OperatorError::InvalidParams("missing `body`".into())),
            }
        };
        let version = match node.param_str("version") {
            Some(v) => Some(v.parse::<VersionTag>()?),
            None => None,
        };
        match node.param_str("op").unwrap_or("get") {
            "get" => {
                let doc = self.store.get(key, version)?;
                let body = doc.body_json().unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&doc.body).into()));
                Ok(json!({ "key": key, "version": doc.version, "body": body }))
            }
            "init" => {
                let v = self.store.init(key, &body()?)?;
                Ok(json!({ "key": key, "version": v }))
            }
            "commit" => {
                let parent = match version {
                    Some(p) => p,
                    None => self.store.head(key)?,
                };
                let v = self.store.commit(key, &body()?, parent)?;
                Ok(json!({ "key": key, "version": v, "parent": parent }))
            }
            other => Err(OperatorError::InvalidParams(format!("unknown environment op `{other}`"))),
        }
    }

    fn memory_op(&self, node: &TaskNode) -> Result<Value, OperatorError> {
        let agent = required_str(node, "agent_id")?;
        let kind: Option<MemoryKind> = optional(node, "kind")?;
        let chapter_version: Option<VersionTag> = optional(node, "chapter_version")?;
        match node.param_str("op").unwrap_or("query") {
            "append" => {
                let kind = kind.ok_or_else(|| OperatorError::InvalidParams("missing `kind`".into()))?;
                let body = required_str(node, "body")?;
                let seq = self.memory.append(agent, kind, body, chapter_version.unwrap_or_default());
                Ok(json!({ "agent_id": agent, "seq": seq }))
            }
            "query" => {
                let filter = MemoryFilter {
                    kind,
                    since_seq: optional(node, "since_seq")?,
                    chapter_version,
                };
                Ok(json!({ "agent_id": agent, "records": self.memory.query(agent, &filter) }))
            }
            other => Err(OperatorError::InvalidParams(format!("unknown memory op `{other}`"))),
        }
    }

    fn reasoning(&self, node: &TaskNode, ctx: &ExecutionContext) -> Result<Value, OperatorError> {
        let handle = self.resource(required_str(node, "backend")?)?;
        let input = ReasoningInput {
            question: required_str(node, "question")?.to_string(),
            evidence: optional(node, "evidence")?.unwrap_or_default(),
            mode: optional(node, "mode")?.unwrap_or(ReasoningMode::Cot),
        };
        let seed = optional::<u64>(node, "seed")?.unwrap_or(ctx.seed);
        let retries = optional::<u32>(node, "max_retries")?.unwrap_or(1);
        let trace = reason(handle, &input, &GenerationParams::seeded(seed), ctx, retries)?;
        Ok(serde_json::to_value(trace).expect("trace serializes"))
    }

    fn task_management(&self, node: &TaskNode, ctx: &ExecutionContext) -> Result<Value, OperatorError> {
        let caps: Vec<String> = match node.params.get("capability") {
            Some(Value::String(s)) => vec![s.clone()],
            Some(_) => optional(node, "capability")?.unwrap_or_default(),
            None => Vec::new(),
        };
        let mut query = DiscoveryQuery::capabilities(caps.clone());
        if let Some(p) = node.param_str("name_pattern") {
            query = query.with_name_pattern(p);
        }
        let best = self
            .registry
            .discover(&query)
            .into_iter()
            .next()
            .ok_or(OperatorError::NoAgentFound(caps))?;
        let input = match node.params.get("input") {
            Some(v) => v.clone(),
            None => serde_json::to_value(&ctx.inputs).expect("inputs serialize"),
        };
        let output = self
            .registry
            .invoke(&best.agent_id, &input, ctx)
            .map_err(|e| OperatorError::Agent {
                agent: best.agent_id.clone(),
                message: e.to_string(),
            })?;
        Ok(json!({ "agent_id": best.agent_id, "output": output }))
    }

    fn optimizer(&self, node: &TaskNode) -> Result<Value, OperatorError> {
        let policy: TaskPolicy =
            optional(node, "policy")?.ok_or_else(|| OperatorError::InvalidParams("missing `policy`".into()))?;
        let history: Vec<TaskMetrics> = optional(node, "history")?.unwrap_or_default();
        Ok(serde_json::to_value(tune(&history, &policy)).expect("policy serializes"))
    }

    fn security(&self, node: &TaskNode, ctx: &ExecutionContext) -> Result<Value, OperatorError> {
        let target = required_str(node, "target")?;
        let action: Action = required_str(node, "check")?.parse()?;
        let principal = node.param_str("principal").unwrap_or(&ctx.principal);
        let decision = authorize(&ctx.capabilities, principal, target, action, now_micros());
        Ok(json!({ "principal": principal, "target": target, "decision": decision }))
    }
}

impl OperatorDispatcher for StandardDispatcher {
    fn supports(&self, _kind: OperatorKind) -> bool {
        true
    }

    fn dispatch(&self, node: &TaskNode, ctx: &ExecutionContext) -> Result<TaskResult, DispatchError> {
        self.run(node, ctx).map_err(DispatchError::from)
    }
}

fn default_action(node: &TaskNode) -> Action {
    match (node.operator_kind, node.param_str("op")) {
        (OperatorKind::Environment, Some("commit" | "init")) | (OperatorKind::Memory, Some("append")) => Action::Write,
        (OperatorKind::Environment | OperatorKind::Memory, _) => Action::Read,
        _ => Action::Invoke,
    }
}

/// Scripted behaviour: sleep, then fail while `attempt <= fail_times` (or
/// always), then return `output` if given.
fn simulate(sim: &Value, ctx: &ExecutionContext) -> Result<Option<Value>, OperatorError> {
    if let Some(ms) = sim["sleep_ms"].as_u64() {
        std::thread::sleep(Duration::from_millis(ms));
    }
    if sim["fail_always"].as_bool() == Some(true) {
        return Err(OperatorError::InvalidParams("simulated permanent failure".into()));
    }
    if sim["fail_times"].as_u64().is_some_and(|n| u64::from(ctx.attempt) <= n) {
        return Err(OperatorError::Io(format!("simulated transient failure on attempt {}", ctx.attempt)));
    }
    Ok(sim.get("output").cloned())
}

fn required_str<'a>(node: &'a TaskNode, key: &str) -> Result<&'a str, OperatorError> {
    node.param_str(key)
        .ok_or_else(|| OperatorError::InvalidParams(format!("missing string `{key}`")))
}

fn optional<T: DeserializeOwned>(node: &TaskNode, key: &str) -> Result<Option<T>, OperatorError> {
    match node.params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| OperatorError::InvalidParams(format!("`{key}`: {e}"))),
    }
}

fn now_micros() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::Capability;
    use crate::resources::{MockEntry, MockFixture, MockProvider, ResourceDescriptor, ResourceKind};

    fn mock(text: &str) -> ResourceHandle {
        let mut fx = MockFixture::default();
        fx.insert("q1", MockEntry::text(text));
        ResourceHandle::from_model(
            ResourceDescriptor::new("mock-llm", ResourceKind::Model, "mock://t"),
            Arc::new(MockProvider::new(fx)),
        )
    }

    #[test]
    fn reasoning_with_mock() {
        let d = StandardDispatcher::new().with_resource(mock("1. a\nANSWER: c"));
        let node = TaskNode::new("r", OperatorKind::Reasoning)
            .with_param("backend", json!("mock-llm"))
            .with_param("question", json!("q1"));
        let (ctx, _) = ExecutionContext::collecting("r");
        let out = d.dispatch(&node, &ctx).unwrap().output;
        assert_eq!(out["answer"], "c");
        assert_eq!(out["steps"], json!(["a"]));
    }

    #[test]
    fn denied_capability_emits_violation() {
        let d = StandardDispatcher::new();
        let node = TaskNode::new("r", OperatorKind::Reasoning).with_param("resource", json!("model/mock"));
        let caps = vec![Capability::new("p", "data/*", [Action::Read], None).unwrap()];
        let (ctx, log) = ExecutionContext::collecting("r");
        let ctx = ctx.with_capabilities("p", caps);
        let err = d.run(&node, &ctx).unwrap_err();
        assert!(matches!(err, OperatorError::CapabilityDenied { .. }));
        let log = log.read().unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].kind, EventKind::Violation);
        assert_eq!(log[0].payload["reason"], "pattern");
    }

    #[test]
    fn timeout_and_simulation() {
        let d = StandardDispatcher::new();
        let (ctx, _) = ExecutionContext::collecting("n");
        let slow = TaskNode::new("n", OperatorKind::Memory)
            .with_param("simulate", json!({"sleep_ms": 200}))
            .with_param("timeout_ms", json!(10));
        assert!(matches!(d.run(&slow, &ctx), Err(OperatorError::OperatorTimeout(10))));
        let flaky = TaskNode::new("n", OperatorKind::Memory).with_param("simulate", json!({"fail_times": 1, "output": 7}));
        let err = d.dispatch(&flaky, &ctx).unwrap_err();
        assert!(err.retriable);
        let mut ctx2 = ctx.clone();
        ctx2.attempt = 2;
        assert_eq!(d.dispatch(&flaky, &ctx2).unwrap().output, json!(7));
    }

    #[test]
    fn environment_and_memory_routes() {
        let d = StandardDispatcher::new();
        let (ctx, _) = ExecutionContext::collecting("n");
        let env = |op: &str| {
            TaskNode::new("e", OperatorKind::Environment)
                .with_param("op", json!(op))
                .with_param("key", json!("world"))
                .with_param("body", json!({"n": 1}))
        };
        d.run(&env("init"), &ctx).unwrap();
        assert_eq!(d.run(&env("commit"), &ctx).unwrap().output["version"], "v1");
        assert_eq!(d.run(&env("get"), &ctx).unwrap().output["body"], json!({"n": 1}));
        let append = TaskNode::new("m", OperatorKind::Memory)
            .with_param("op", json!("append"))
            .with_param("agent_id", json!("alice"))
            .with_param("kind", json!("goal"))
            .with_param("body", json!("find the key"));
        assert_eq!(d.run(&append, &ctx).unwrap().output["seq"], 1);
        let query = TaskNode::new("m", OperatorKind::Memory).with_param("agent_id", json!("alice"));
        assert_eq!(d.run(&query, &ctx).unwrap().output["records"].as_array().unwrap().len(), 1);
    }
}
