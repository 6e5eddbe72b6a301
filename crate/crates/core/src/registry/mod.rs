//! Agent lifecycle: specify, publish, register, discover, retire.

mod agent;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::ExecutionContext;
use crate::resources::ResourceKind;

pub use agent::{probe_remote, Agent, FnAgent, HealthMonitor, RemoteAgent};

/// Interval between health probes of remote endpoints.
pub const HEALTH_PERIOD: Duration = Duration::from_secs(30);
pub const PROBE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid agent specification: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("agent `{0}` is already published")]
    DuplicateAgent(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("endpoint `{endpoint}` unreachable: {reason}")]
    EndpointUnreachable { endpoint: String, reason: String },
    #[error("agent `{agent}` cannot go from {from} to {to}")]
    InvalidTransition { agent: String, from: AgentStatus, to: AgentStatus },
    #[error("agent `{agent}` failed: {message}")]
    Invocation { agent: String, message: String },
    #[error("registry file `{path}`: {message}")]
    Persist { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpecification {
    pub name: String,
    pub version: String,
    pub capabilities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_schema: Option<String>,
    #[serde(default)]
    pub required_resources: Vec<ResourceKind>,
    #[serde(default)]
    pub config: BTreeMap<String, Value>,
}

impl AgentSpecification {
    pub fn new<I, S>(name: impl Into<String>, version: impl Into<String>, capabilities: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: name.into(),
            version: version.into(),
            capabilities: capabilities.into_iter().map(Into::into).collect(),
            input_schema: None,
            output_schema: None,
            required_resources: Vec::new(),
            config: BTreeMap::new(),
        }
    }

    pub fn agent_id(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }

    pub fn semver(&self) -> semver::Version {
        semver::Version::parse(&self.version).unwrap_or_else(|_| semver::Version::new(0, 0, 0))
    }
}

/// Checks a spec in isolation and returns its canonical form: trimmed,
/// lowercased, sorted and deduplicated capability tags.
pub fn specify(spec: &AgentSpecification) -> Result<AgentSpecification, RegistryError> {
    let mut problems = Vec::new();
    let name_ok = !spec.name.is_empty()
        && spec.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !name_ok {
        problems.push(format!("name `{}` must be non-empty [A-Za-z0-9-_.]", spec.name));
    }
    if let Err(e) = semver::Version::parse(&spec.version) {
        problems.push(format!("version `{}` is not semver: {e}", spec.version));
    }
    let caps: BTreeSet<String> = spec.capabilities.iter().map(|c| c.trim().to_lowercase()).collect();
    if caps.is_empty() {
        problems.push("capabilities must not be empty".to_string());
    }
    if caps.iter().any(String::is_empty) {
        problems.push("capability tags must not be blank".to_string());
    }
    if !problems.is_empty() {
        return Err(RegistryError::InvalidSpec(problems));
    }
    Ok(AgentSpecification {
        capabilities: caps.into_iter().collect(),
        ..spec.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Published,
    Registered,
    Retired,
}

impl fmt::Display for AgentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentStatus::Published => "published",
            AgentStatus::Registered => "registered",
            AgentStatus::Retired => "retired",
        })
    }
}

/// Ordered worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Unhealthy,
    Unknown,
    Healthy,
}

/// Where an agent is invoked: `inproc:<callable id>` or an http(s) base URL.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    InProcess(String),
    Remote(String),
}

impl Endpoint {
    pub fn parse(s: &str) -> Result<Self, RegistryError> {
        if let Some(id) = s.strip_prefix("inproc:") {
            if !id.is_empty() {
                return Ok(Endpoint::InProcess(id.to_string()));
            }
        } else if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Endpoint::Remote(s.trim_end_matches('/').to_string()));
        }
        Err(RegistryError::EndpointUnreachable {
            endpoint: s.to_string(),
            reason: "expected inproc:<id> or an http(s) URL".to_string(),
        })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::InProcess(id) => write!(f, "inproc:{id}"),
            Endpoint::Remote(url) => f.write_str(url),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Endpoint::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub agent_id: String,
    pub spec: AgentSpecification,
    pub endpoint: Option<Endpoint>,
    pub status: AgentStatus,
    pub registered_at: Option<u64>,
    pub health: Health,
}

impl AgentDescriptor {
    fn extra_capabilities(&self, query: &BTreeSet<String>) -> usize {
        self.spec.capabilities.len() - query.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryQuery {
    #[serde(default)]
    pub capabilities: BTreeSet<String>,
    #[serde(default)]
    pub name_pattern: Option<String>,
    #[serde(default)]
    pub min_health: Option<Health>,
}

impl DiscoveryQuery {
    pub fn capabilities<I, S>(caps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            capabilities: caps.into_iter().map(|c| c.into().trim().to_lowercase()).collect(),
            ..Self::default()
        }
    }

    pub fn with_name_pattern(mut self, pattern: impl Into<String>) -> Self {
        self.name_pattern = Some(pattern.into());
        self
    }

    pub fn with_min_health(mut self, h: Health) -> Self {
        self.min_health = Some(h);
        self
    }

    pub fn matches(&self, d: &AgentDescriptor) -> bool {
        if d.status != AgentStatus::Registered {
            return false;
        }
        if self.min_health.is_some_and(|m| d.health < m) {
            return false;
        }
        if let Some(p) = &self.name_pattern {
            if !glob::Pattern::new(p).is_ok_and(|p| p.matches(&d.spec.name)) {
                return false;
            }
        }
        self.capabilities.iter().all(|c| d.spec.capabilities.contains(c))
    }
}

/// Sort key for discovery: healthier first, then fewer extra capabilities,
/// newer version, and name.
pub fn discovery_order(query: &DiscoveryQuery, a: &AgentDescriptor, b: &AgentDescriptor) -> std::cmp::Ordering {
    b.health
        .cmp(&a.health)
        .then(a.extra_capabilities(&query.capabilities).cmp(&b.extra_capabilities(&query.capabilities)))
        .then(b.spec.semver().cmp(&a.spec.semver()))
        .then(a.spec.name.cmp(&b.spec.name))
        .then(a.agent_id.cmp(&b.agent_id))
}

type Snapshot = Arc<BTreeMap<String, AgentDescriptor>>;

/// Shared agent registry. Reads work on an immutable snapshot; mutations are
/// serialized and swap in a new snapshot, persisting it first when the
/// registry is file-backed.
#[derive(Default)]
pub struct AgentRegistry {
    snapshot: RwLock<Snapshot>,
    write: Mutex<()>,
    callables: RwLock<BTreeMap<String, Arc<dyn Agent>>>,
    path: Option<PathBuf>,
    probe_timeout: Option<Duration>,
}

impl fmt::Debug for AgentRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentRegistry")
            .field("agents", &self.snapshot().len())
            .field("path", &self.path)
            .finish()
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl AgentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; later mutations rewrite it atomically.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let path = path.into();
        let persist_err = |message: String| RegistryError::Persist {
            path: path.display().to_string(),
            message,
        };
        let agents = match std::fs::read_to_string(&path) {
            Ok(text) => {
                let list: Vec<AgentDescriptor> = serde_json::from_str(&text).map_err(|e| persist_err(e.to_string()))?;
                list.into_iter().map(|d| (d.agent_id.clone(), d)).collect()
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(persist_err(e.to_string())),
        };
        Ok(Self {
            snapshot: RwLock::new(Arc::new(agents)),
            path: Some(path),
            ..Self::default()
        })
    }

    pub fn with_probe_timeout(mut self, t: Duration) -> Self {
        self.probe_timeout = Some(t);
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Makes an in-process callable available as `inproc:<id>`.
    pub fn bind(&self, callable_id: impl Into<String>, agent: Arc<dyn Agent>) {
        self.callables.write().unwrap().insert(callable_id.into(), agent);
    }

    pub fn snapshot(&self) -> Snapshot {
        Arc::clone(&self.snapshot.read().unwrap())
    }

    pub fn get(&self, agent_id: &str) -> Option<AgentDescriptor> {
        self.snapshot().get(agent_id).cloned()
    }

    pub fn list(&self) -> Vec<AgentDescriptor> {
        self.snapshot().values().cloned().collect()
    }

    /// Canonical form of `spec`, also rejecting a `(name, version)` already
    /// in the registry.
    pub fn specify(&self, spec: &AgentSpecification) -> Result<AgentSpecification, RegistryError> {
        let canonical = specify(spec)?;
        if self.snapshot().contains_key(&canonical.agent_id()) {
            return Err(RegistryError::InvalidSpec(vec![format!("duplicate {}", canonical.agent_id())]));
        }
        Ok(canonical)
    }

    fn mutate<T>(
        &self,
        f: impl FnOnce(&mut BTreeMap<String, AgentDescriptor>) -> Result<T, RegistryError>,
    ) -> Result<T, RegistryError> {
        let _guard = self.write.lock().unwrap();
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        if let Some(path) = &self.path {
            persist(path, &next)?;
        }
        *self.snapshot.write().unwrap() = Arc::new(next);
        Ok(out)
    }

    pub fn publish(&self, spec: &AgentSpecification) -> Result<AgentDescriptor, RegistryError> {
        let spec = specify(spec)?;
        let id = spec.agent_id();
        self.mutate(|agents| {
            if agents.contains_key(&id) {
                return Err(RegistryError::DuplicateAgent(id.clone()));
            }
            let d = AgentDescriptor {
                agent_id: id.clone(),
                spec,
                endpoint: None,
                status: AgentStatus::Published,
                registered_at: None,
                health: Health::Unknown,
            };
            agents.insert(id, d.clone());
            Ok(d)
        })
    }

    fn probe(&self, endpoint: &Endpoint) -> Result<(), RegistryError> {
        match endpoint {
            Endpoint::InProcess(id) => {
                if self.callables.read().unwrap().contains_key(id) {
                    Ok(())
                } else {
                    Err(RegistryError::EndpointUnreachable {
                        endpoint: endpoint.to_string(),
                        reason: "no such in-process callable".to_string(),
                    })
                }
            }
            Endpoint::Remote(url) => probe_remote(url, self.probe_timeout.unwrap_or(PROBE_TIMEOUT)).map_err(|reason| {
                RegistryError::EndpointUnreachable {
                    endpoint: url.clone(),
                    reason,
                }
            }),
        }
    }

    /// Probes `endpoint`, then makes the agent discoverable.
    pub fn register(&self, agent_id: &str, endpoint: &str) -> Result<AgentDescriptor, RegistryError> {
        let endpoint = Endpoint::parse(endpoint)?;
        let current = self.get(agent_id).ok_or_else(|| RegistryError::UnknownAgent(agent_id.to_string()))?;
        check_transition(&current, AgentStatus::Registered)?;
        self.probe(&endpoint)?;
        self.mutate(|agents| {
            let d = agents
                .get_mut(agent_id)
                .ok_or_else(|| RegistryError::UnknownAgent(agent_id.to_string()))?;
            check_transition(d, AgentStatus::Registered)?;
            d.status = AgentStatus::Registered;
            d.endpoint = Some(endpoint);
            d.registered_at = Some(now_secs());
            d.health = Health::Healthy;
            Ok(d.clone())
        })
    }

    pub fn retire(&self, agent_id: &str) -> Result<AgentDescriptor, RegistryError> {
        self.mutate(|agents| {
            let d = agents
                .get_mut(agent_id)
                .ok_or_else(|| RegistryError::UnknownAgent(agent_id.to_string()))?;
            check_transition(d, AgentStatus::Retired)?;
            d.status = AgentStatus::Retired;
            Ok(d.clone())
        })
    }

    /// Re-probes every registered remote agent and records the result.
    /// In-process agents stay healthy.
    pub fn refresh_health(&self) -> Result<(), RegistryError> {
        let remotes: Vec<(String, String)> = self
            .snapshot()
            .values()
            .filter(|d| d.status == AgentStatus::Registered)
            .filter_map(|d| match &d.endpoint {
                Some(Endpoint::Remote(url)) => Some((d.agent_id.clone(), url.clone())),
                _ => None,
            })
            .collect();
        if remotes.is_empty() {
            return Ok(());
        }
        let timeout = self.probe_timeout.unwrap_or(PROBE_TIMEOUT);
        let results: Vec<(String, Health)> = remotes
            .into_iter()
            .map(|(id, url)| {
                let h = if probe_remote(&url, timeout).is_ok() { Health::Healthy } else { Health::Unhealthy };
                (id, h)
            })
            .collect();
        self.mutate(|agents| {
            for (id, h) in results {
                if let Some(d) = agents.get_mut(&id) {
                    d.health = h;
                }
            }
            Ok(())
        })
    }

    pub fn discover(&self, query: &DiscoveryQuery) -> Vec<AgentDescriptor> {
        let snap = self.snapshot();
        let mut hits: Vec<AgentDescriptor> = snap.values().filter(|d| query.matches(d)).cloned().collect();
        hits.sort_by(|a, b| discovery_order(query, a, b));
        hits
    }

    /// Calls a registered agent through its endpoint.
    pub fn invoke(&self, agent_id: &str, input: &Value, ctx: &ExecutionContext) -> Result<Value, RegistryError> {
        let d = self.get(agent_id).ok_or_else(|| RegistryError::UnknownAgent(agent_id.to_string()))?;
        if d.status != AgentStatus::Registered {
            return Err(RegistryError::InvalidTransition {
                agent: agent_id.to_string(),
                from: d.status,
                to: AgentStatus::Registered,
            });
        }
        let fail = |message: String| RegistryError::Invocation {
            agent: agent_id.to_string(),
            message,
        };
        match d.endpoint {
            Some(Endpoint::InProcess(id)) => {
                let callable = self.callables.read().unwrap().get(&id).cloned();
                let callable = callable.ok_or_else(|| fail(format!("callable `{id}` is not bound")))?;
                callable.invoke(input, ctx).map_err(fail)
            }
            Some(Endpoint::Remote(url)) => RemoteAgent::new(url).invoke(input, ctx).map_err(fail),
            None => Err(fail("no endpoint".to_string())),
        }
    }
}

fn check_transition(d: &AgentDescriptor, to: AgentStatus) -> Result<(), RegistryError> {
    let ok = matches!(
        (d.status, to),
        (AgentStatus::Published, AgentStatus::Registered) | (AgentStatus::Registered, AgentStatus::Retired)
    );
    if ok {
        Ok(())
    } else {
        Err(RegistryError::InvalidTransition {
            agent: d.agent_id.clone(),
            from: d.status,
            to,
        })
    }
}

fn persist(path: &Path, agents: &BTreeMap<String, AgentDescriptor>) -> Result<(), RegistryError> {
    let err = |e: std::io::Error| RegistryError::Persist {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    let list: Vec<&AgentDescriptor> = agents.values().collect();
    let text = serde_json::to_string_pretty(&list).expect("descriptors serialize");
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)
}
