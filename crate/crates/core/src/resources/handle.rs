use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{
    parse_yes_no, BackendErrorClass, Completion, GenerationOutput, GenerationParams, ResourceDescriptor,
    ResourceError, ResourceKind, ToolSchema, YesNoEvidence, YES_NO_SUFFIX,
};

/// Base delay for retries inside a handle; full jitter on top.
const RETRY_BACKOFF_MS: u64 = 5;

pub trait ModelProvider: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion, ResourceError>;
}

pub trait ToolProvider: Send + Sync {
    fn schema(&self) -> &ToolSchema;
    fn call(&self, args: &Value) -> Result<Value, ResourceError>;
}

enum Backend {
    Model(Arc<dyn ModelProvider>),
    Tool(Arc<dyn ToolProvider>),
    Data(PathBuf),
}

struct Gate {
    cap: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

struct Permit(Arc<Gate>);

impl Gate {
    fn acquire(self: &Arc<Self>) -> Permit {
        let mut n = self.in_use.lock().unwrap();
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(Arc::clone(self))
    }
}

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.in_use.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// A resolved resource. Cloning shares the concurrency gate.
#[derive(Clone)]
pub struct ResourceHandle {
    desc: Arc<ResourceDescriptor>,
    backend: Arc<Backend>,
    gate: Arc<Gate>,
    calls: Arc<AtomicU64>,
}

impl std::fmt::Debug for ResourceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResourceHandle").field("desc", &self.desc).finish()
    }
}

impl ResourceHandle {
    fn with_backend(desc: ResourceDescriptor, backend: Backend) -> Self {
        let gate = Gate {
            cap: desc.limits.max_concurrent.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        };
        Self {
            desc: Arc::new(desc),
            backend: Arc::new(backend),
            gate: Arc::new(gate),
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn from_model(desc: ResourceDescriptor, provider: Arc<dyn ModelProvider>) -> Self {
        Self::with_backend(desc, Backend::Model(provider))
    }

    pub fn from_tool(desc: ResourceDescriptor, provider: Arc<dyn ToolProvider>) -> Self {
        Self::with_backend(desc, Backend::Tool(provider))
    }

    pub(crate) fn from_data(desc: ResourceDescriptor, path: PathBuf) -> Self {
        Self::with_backend(desc, Backend::Data(path))
    }

    pub fn descriptor(&self) -> &ResourceDescriptor {
        &self.desc
    }

    pub fn id(&self) -> &str {
        &self.desc.resource_id
    }

    /// Provider invocations issued so far, retries included.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn wrong_kind(&self, expected: ResourceKind) -> ResourceError {
        ResourceError::WrongKind {
            id: self.desc.resource_id.clone(),
            expected,
            actual: self.desc.kind,
        }
    }

    fn model(&self) -> Result<&Arc<dyn ModelProvider>, ResourceError> {
        match &*self.backend {
            Backend::Model(m) => Ok(m),
            _ => Err(self.wrong_kind(ResourceKind::Model)),
        }
    }

    /// Runs `f` under the handle's gate, timeout and retry limits.
    fn limited<T, F>(&self, seed: u64, f: F) -> Result<T, ResourceError>
    where
        T: Send + 'static,
        F: Fn() -> Result<T, ResourceError> + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        let limits = self.desc.limits;
        let timeout = Duration::from_millis(limits.timeout_ms);
        let mut last = None;
        for attempt in 1..=limits.max_retries + 1 {
            if attempt > 1 {
                thread::sleep(retry_delay(seed, attempt));
            }
            let permit = self.gate.acquire();
            self.calls.fetch_add(1, Ordering::Relaxed);
            let (tx, rx) = mpsc::channel();
            let job = Arc::clone(&f);
            // the permit travels with the call so an abandoned slow call still counts
            thread::spawn(move || {
                let _permit = permit;
                let _ = tx.send(job());
            });
            let result = match rx.recv_timeout(timeout) {
                Ok(r) => r,
                Err(RecvTimeoutError::Timeout) => Err(ResourceError::backend(
                    BackendErrorClass::Timeout,
                    true,
                    format!("no response within {} ms", limits.timeout_ms),
                )),
                Err(RecvTimeoutError::Disconnected) => Err(ResourceError::backend(
                    BackendErrorClass::Http,
                    false,
                    "provider panicked",
                )),
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retriable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn complete_once(&self, prompt: &str, params: GenerationParams) -> Result<Completion, ResourceError> {
        let model = Arc::clone(self.model()?);
        let prompt = prompt.to_string();
        self.limited(params.seed.unwrap_or(0), move || model.complete(&prompt, &params))
    }

    /// One completion, or `n_samples` independent ones with seeds offset by sample index.
    pub fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<GenerationOutput, ResourceError> {
        self.model()?;
        if params.n_samples <= 1 {
            return self.complete_once(prompt, *params).map(GenerationOutput::Single);
        }
        let completions = (0..params.n_samples)
            .map(|i| self.complete_once(prompt, params.for_sample(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GenerationOutput::Samples { completions })
    }

    /// Yes/no evidence: answer-token logits for open-logit backends, sample
    /// counts otherwise.
    pub fn ask_yes_no(&self, question: &str, params: &GenerationParams) -> Result<YesNoEvidence, ResourceError> {
        self.model()?;
        let prompt = format!("{question}\n{YES_NO_SUFFIX}");
        if self.desc.supports_logprobs {
            let c = self.complete_once(&prompt, params.for_sample(0))?;
            let first = c
                .token_logits
                .as_ref()
                .and_then(|t| t.first())
                .ok_or_else(|| ResourceError::backend(BackendErrorClass::Parse, false, "no token logits"))?;
            let find = |want: bool| {
                first
                    .alternatives
                    .iter()
                    .find(|(tok, _)| parse_yes_no(tok) == Some(want))
                    .map(|(_, v)| *v)
            };
            return match (find(true), find(false)) {
                (Some(v_yes), Some(v_no)) => Ok(YesNoEvidence::Logits { v_yes, v_no }),
                _ => Err(ResourceError::backend(
                    BackendErrorClass::Parse,
                    false,
                    "answer token alternatives lack Yes or No",
                )),
            };
        }
        let (mut m_yes, mut m_no, mut unparseable) = (0, 0, 0);
        for i in 0..params.n_samples.max(1) {
            let c = self.complete_once(&prompt, params.for_sample(i))?;
            match parse_yes_no(&c.text) {
                Some(true) => m_yes += 1,
                Some(false) => m_no += 1,
                None => unparseable += 1,
            }
        }
        if m_yes + m_no == 0 {
            return Err(ResourceError::NoParseableAnswers);
        }
        Ok(YesNoEvidence::Counts { m_yes, m_no, unparseable })
    }

    pub fn invoke_tool(&self, args: &Value) -> Result<Value, ResourceError> {
        let tool = match &*self.backend {
            Backend::Tool(t) => Arc::clone(t),
            _ => return Err(self.wrong_kind(ResourceKind::Tool)),
        };
        tool.schema().check(args)?;
        let args = args.clone();
        self.limited(0, move || tool.call(&args))
    }

    pub fn read_data(&self) -> Result<Vec<u8>, ResourceError> {
        match &*self.backend {
            Backend::Data(path) => std::fs::read(path).map_err(|e| ResourceError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            }),
            _ => Err(self.wrong_kind(ResourceKind::Data)),
        }
    }
}

fn retry_delay(seed: u64, attempt: u32) -> Duration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(attempt) << 32));
    let cap = RETRY_BACKOFF_MS << (attempt - 2).min(10);
    Duration::from_millis(rng.gen_range(0..=cap))
}
