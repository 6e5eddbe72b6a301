use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use super::{AgentRegistry, HEALTH_PERIOD};
use crate::engine::ExecutionContext;

/// Something the registry can invoke on behalf of a node.
pub trait Agent: Send + Sync {
    fn invoke(&self, input: &Value, ctx: &ExecutionContext) -> Result<Value, String>;
}

/// In-process agent backed by a closure.
pub struct FnAgent<F>(F);

impl<F> FnAgent<F>
where
    F: Fn(&Value, &ExecutionContext) -> Result<Value, String> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> Agent for FnAgent<F>
where
    F: Fn(&Value, &ExecutionContext) -> Result<Value, String> + Send + Sync,
{
    fn invoke(&self, input: &Value, ctx: &ExecutionContext) -> Result<Value, String> {
        (self.0)(input, ctx)
    }
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// `GET <base>/health` must answer 2xx.
pub fn probe_remote(base: &str, timeout: Duration) -> Result<(), String> {
    let resp = agent(timeout).get(&format!("{base}/health")).call().map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    if (200..300).contains(&status) {
        Ok(())
    } else {
        Err(format!("health check returned {status}"))
    }
}

/// Agent served over HTTP: `POST <base>/invoke` with
/// `{input, node_id, attempt, seed}`, answering `{output}`.
#[derive(Debug, Clone)]
pub struct RemoteAgent {
    base: String,
    timeout: Duration,
}

impl RemoteAgent {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into(),
            timeout: Duration::from_secs(60),
        }
    }
}

impl Agent for RemoteAgent {
    fn invoke(&self, input: &Value, ctx: &ExecutionContext) -> Result<Value, String> {
        let body = json!({"input": input, "node_id": ctx.node_id, "attempt": ctx.attempt, "seed": ctx.seed});
        let mut resp = agent(self.timeout)
            .post(&format!("{}/invoke", self.base))
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if status >= 400 {
            return Err(format!("invoke returned {status}"));
        }
        let mut v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        match v.get_mut("output") {
            Some(out) => Ok(out.take()),
            None => Err("response has no `output` field".to_string()),
        }
    }
}

/// Background thread that re-probes remote agents every `period`. Stops
/// when dropped.
pub struct HealthMonitor {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl HealthMonitor {
    pub fn start(registry: Arc<AgentRegistry>) -> Self {
        Self::with_period(registry, HEALTH_PERIOD)
    }

    pub fn with_period(registry: Arc<AgentRegistry>, period: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            let tick = Duration::from_millis(10).min(period);
            let mut waited = Duration::ZERO;
            while !flag.load(Ordering::Relaxed) {
                std::thread::sleep(tick);
                waited += tick;
                if waited >= period {
                    waited = Duration::ZERO;
                    let _ = registry.refresh_health();
                }
            }
        });
        Self {
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for HealthMonitor {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
