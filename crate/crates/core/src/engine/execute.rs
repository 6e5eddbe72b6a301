use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{
    payload, plan, Clock, DispatchError, EngineError, EventKind, EventSink, ExecutionContext, ExecutionEvent,
    LogView, NodeEvent, NodeStatus, OperatorDispatcher, Payload, TaskResult, WorkflowInstance, WorkflowResult,
    SCOPE, SCOPE_NODE,
};
use crate::operators::Capability;
use crate::workflow::{topological_order, RetryPolicy};

#[derive(Debug, Clone, Default)]
pub struct ExecuteOptions {
    pub seed: u64,
    pub principal: String,
    pub capabilities: Vec<Capability>,
    /// Mirror of the event log that other threads may poll while the instance runs.
    pub view: Option<LogView>,
}

impl ExecuteOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

enum Msg {
    Event(NodeEvent),
    Done {
        node_id: String,
        attempt: u32,
        started_us: u64,
        result: Result<TaskResult, DispatchError>,
    },
    RetryDue(String),
}

/// Full-jitter backoff for the retry after failed attempt `attempt`:
/// uniform in `[0, base * factor^(attempt-1) * scale]` milliseconds, drawn
/// from a generator seeded by `(seed, node_id, attempt)`.
pub fn backoff_delay_ms(seed: u64, node_id: &str, attempt: u32, policy: &RetryPolicy, scale: f64) -> u64 {
    let cap = policy.backoff_base_ms as f64 * policy.backoff_factor.powi(attempt as i32 - 1) * scale;
    if cap.is_nan() || cap <= 0.0 {
        return 0;
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(node_id.as_bytes());
    h.update(attempt.to_le_bytes());
    let digest = h.finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    rng.gen_range(0.0..=cap).floor() as u64
}

struct Log<'a> {
    events: Vec<ExecutionEvent>,
    clock: &'a dyn Clock,
    view: Option<&'a LogView>,
}

impl Log<'_> {
    fn push(&mut self, node_id: &str, kind: EventKind, payload: Payload) -> u64 {
        let ts = self.clock.now_micros();
        let e = ExecutionEvent {
            seq: self.events.len() as u64 + 1,
            ts,
            node_id: node_id.to_string(),
            kind,
            payload,
        };
        if let Some(v) = self.view {
            v.push(e.clone());
        }
        self.events.push(e);
        ts
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "node body panicked".into())
}

/// Runs a fresh instance to completion.
///
/// Task-level failures do not abort the run: a node that exhausts its
/// retries is marked failed, its strict descendants are cancelled, and
/// independent branches carry on.
pub fn execute(
    mut instance: WorkflowInstance,
    dispatcher: &dyn OperatorDispatcher,
    clock: &dyn Clock,
    opts: &ExecuteOptions,
) -> Result<WorkflowResult, EngineError> {
    if !instance.is_fresh() {
        return Err(EngineError::NotFresh(instance.instance_id.clone()));
    }
    plan(&instance.spec)?;
    if let Some(n) = instance.spec.nodes.iter().find(|n| !dispatcher.supports(n.operator_kind)) {
        return Err(EngineError::DispatchUnresolvable(n.operator_kind));
    }
    instance.strategy.check(instance.spec.concurrency_cap)?;

    let spec = instance.spec.clone();
    let strategy = instance.strategy;
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &spec.nodes {
        for d in &n.depends_on {
            children.entry(d.as_str()).or_default().push(&n.node_id);
        }
    }
    let mut ancestors: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for id in topological_order(&spec).expect("validated acyclic") {
        let node = spec.node(&id).expect("node exists");
        let mut set = BTreeSet::new();
        for d in &node.depends_on {
            set.insert(d.as_str());
            set.extend(ancestors[d.as_str()].iter().copied());
        }
        ancestors.insert(&node.node_id, set);
    }
    let capabilities: Arc<[Capability]> = Arc::from(opts.capabilities.clone());

    let mut log = Log {
        events: Vec::new(),
        clock,
        view: opts.view.as_ref(),
    };
    let mut outputs: BTreeMap<String, Value> = BTreeMap::new();
    let mut failures: BTreeMap<String, String> = BTreeMap::new();
    let mut ready: BTreeSet<String> = BTreeSet::new();
    let states = &mut instance.node_states;

    let set_status = |states: &mut BTreeMap<String, super::NodeState>, id: &str, next: NodeStatus| {
        let s = states.get_mut(id).expect("known node");
        debug_assert!(s.status.can_become(next), "{id}: {} -> {next}", s.status);
        s.status = next;
    };

    for n in &spec.nodes {
        if n.depends_on.is_empty() {
            set_status(states, &n.node_id, NodeStatus::Ready);
            log.push(&n.node_id, EventKind::Scheduled, payload([("attempt", 1)]));
            ready.insert(n.node_id.clone());
        }
    }

    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Msg>();
        let mut running = 0usize;
        let mut waiting = 0usize;
        let mut retries_used = 0u32;
        loop {
            while running < strategy.parallelism {
                let Some(id) = ready.pop_first() else { break };
                let node = spec.node(&id).expect("node exists");
                set_status(states, &id, NodeStatus::Running);
                let state = states.get_mut(&id).expect("known node");
                state.attempts += 1;
                let attempt = state.attempts;
                let ts = log.push(&id, EventKind::Started, payload([("attempt", attempt)]));
                state.started_at.get_or_insert(ts);

                let inputs = ancestors[id.as_str()]
                    .iter()
                    .filter_map(|a| outputs.get(*a).map(|v| (a.to_string(), v.clone())))
                    .collect();
                let event_tx = tx.clone();
                let sink: EventSink = Arc::new(move |e| {
                    let _ = event_tx.send(Msg::Event(e));
                });
                let mut ctx = ExecutionContext::new(id.clone(), sink).with_inputs(inputs).with_seed(opts.seed);
                ctx.instance_id = instance.instance_id.clone();
                ctx.attempt = attempt;
                ctx.principal = opts.principal.clone();
                ctx.capabilities = Arc::clone(&capabilities);
                let done_tx = tx.clone();
                scope.spawn(move || {
                    let started_us = clock.now_micros();
                    let result = catch_unwind(AssertUnwindSafe(|| dispatcher.dispatch(node, &ctx)))
                        .unwrap_or_else(|p| Err(DispatchError::new("panic", panic_message(p), false)));
                    let _ = done_tx.send(Msg::Done {
                        node_id: node.node_id.clone(),
                        attempt,
                        started_us,
                        result,
                    });
                });
                running += 1;
            }
            if running == 0 && waiting == 0 {
                break;
            }
            match rx.recv().expect("engine holds a sender") {
                Msg::Event(e) => {
                    log.push(&e.node_id, e.kind, e.payload);
                }
                Msg::RetryDue(id) => {
                    waiting -= 1;
                    set_status(states, &id, NodeStatus::Ready);
                    let next = states[&id].attempts + 1;
                    log.push(&id, EventKind::Scheduled, payload([("attempt", next)]));
                    ready.insert(id);
                }
                Msg::Done {
                    node_id,
                    attempt,
                    started_us,
                    result,
                } => {
                    running -= 1;
                    let latency = clock.now_micros().saturating_sub(started_us);
                    match result {
                        Ok(task) => {
                            set_status(states, &node_id, NodeStatus::Succeeded);
                            let ts = log.push(
                                &node_id,
                                EventKind::Succeeded,
                                payload([("attempt", attempt.to_string()), ("latency_us", latency.to_string())]),
                            );
                            states.get_mut(&node_id).expect("known node").ended_at = Some(ts);
                            outputs.insert(node_id.clone(), task.output);
                            for child in children.get(node_id.as_str()).into_iter().flatten() {
                                let c = spec.node(child).expect("child exists");
                                let all_done = c
                                    .depends_on
                                    .iter()
                                    .all(|d| states[d].status == NodeStatus::Succeeded);
                                if all_done && states[*child].status == NodeStatus::Pending {
                                    set_status(states, child, NodeStatus::Ready);
                                    log.push(child, EventKind::Scheduled, payload([("attempt", 1)]));
                                    ready.insert(child.to_string());
                                }
                            }
                        }
                        Err(err) => {
                            set_status(states, &node_id, NodeStatus::Failed);
                            states.get_mut(&node_id).expect("known node").last_error = Some(err.to_string());
                            let policy = spec.node(&node_id).expect("node exists").retry_policy;
                            let retry = err.retriable
                                && attempt < policy.max_attempts
                                && retries_used < strategy.retry_budget;
                            if retry {
                                retries_used += 1;
                                let delay =
                                    backoff_delay_ms(opts.seed, &node_id, attempt, &policy, strategy.backoff_scale);
                                log.push(
                                    &node_id,
                                    EventKind::Retried,
                                    payload([
                                        ("attempt", attempt.to_string()),
                                        ("class", err.class.clone()),
                                        ("delay_ms", delay.to_string()),
                                        ("error", err.message.clone()),
                                        ("latency_us", latency.to_string()),
                                        (SCOPE, SCOPE_NODE.to_string()),
                                    ]),
                                );
                                waiting += 1;
                                let retry_tx = tx.clone();
                                scope.spawn(move || {
                                    clock.sleep(Duration::from_millis(delay));
                                    let _ = retry_tx.send(Msg::RetryDue(node_id));
                                });
                            } else {
                                let ts = log.push(
                                    &node_id,
                                    EventKind::Failed,
                                    payload([
                                        ("attempt", attempt.to_string()),
                                        ("class", err.class.clone()),
                                        ("error", err.message.clone()),
                                        ("latency_us", latency.to_string()),
                                    ]),
                                );
                                states.get_mut(&node_id).expect("known node").ended_at = Some(ts);
                                failures.insert(node_id.clone(), err.to_string());
                                let mut queue: VecDeque<&str> =
                                    children.get(node_id.as_str()).cloned().unwrap_or_default().into();
                                while let Some(d) = queue.pop_front() {
                                    if states[d].status.is_terminal() {
                                        continue;
                                    }
                                    set_status(states, d, NodeStatus::Cancelled);
                                    let ts = log.push(
                                        d,
                                        EventKind::Cancelled,
                                        payload([("reason", format!("dependency {node_id} failed"))]),
                                    );
                                    states.get_mut(d).expect("known node").ended_at = Some(ts);
                                    queue.extend(children.get(d).into_iter().flatten().copied());
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    instance.event_log = log.events;
    Ok(WorkflowResult {
        instance,
        outputs,
        failures,
    })
}
