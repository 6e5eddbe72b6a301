use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{
    builtin_tool, FaultInjector, HttpProvider, MockFixture, MockProvider, ModelProvider, ResourceDescriptor,
    ResourceError, ResourceHandle, ResourceKind,
};

/// Tags that fault injection applies to unless the uri says otherwise.
pub const DEFAULT_FAULT_TAGS: &str = "goal:,write:";

/// Maps descriptors to handles.
///
/// Shipped providers: `model` over `mock`, `http` and `https`; `tool` over
/// `builtin`; `data` over `file`. Devices have none. Extra model providers
/// can be registered per scheme.
#[derive(Default)]
pub struct Resolver {
    fixture_root: Option<PathBuf>,
    fixtures: BTreeMap<String, MockFixture>,
    custom: BTreeMap<String, Arc<dyn ModelProvider>>,
    injectors: Mutex<Vec<Arc<FaultInjector>>>,
}

impl Resolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Directory that `mock://<path>` fixtures are read from, as `<root>/<path>.json`.
    pub fn with_fixture_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.fixture_root = Some(root.into());
        self
    }

    /// Registers an in-memory fixture for `mock://<name>`; takes precedence over files.
    pub fn with_fixture(mut self, name: impl Into<String>, fixture: MockFixture) -> Self {
        self.fixtures.insert(name.into(), fixture);
        self
    }

    pub fn with_model_provider(mut self, scheme: impl Into<String>, provider: Arc<dyn ModelProvider>) -> Self {
        self.custom.insert(scheme.into(), provider);
        self
    }

    /// Total faults injected by every fault-wrapped handle this resolver produced.
    pub fn injected_faults(&self) -> u64 {
        self.injectors.lock().unwrap().iter().map(|f| f.injected()).sum()
    }

    pub fn resolve(&self, desc: &ResourceDescriptor) -> Result<ResourceHandle, ResourceError> {
        let scheme = desc.scheme();
        let rest = desc.uri.split_once("://").map_or("", |(_, r)| r);
        let (path, query) = rest.split_once('?').unwrap_or((rest, ""));
        let no_provider = || ResourceError::NoProvider {
            kind: desc.kind,
            scheme: scheme.to_string(),
        };
        match (desc.kind, scheme) {
            (ResourceKind::Model, "mock") => {
                let fixture = self.fixture(path)?;
                let mut provider: Arc<dyn ModelProvider> = Arc::new(MockProvider::new(fixture));
                let q = parse_query(query);
                let rate: f64 = q.get("fault_rate").and_then(|v| v.parse().ok()).unwrap_or(0.0);
                if rate > 0.0 {
                    let seed = q.get("fault_seed").and_then(|v| v.parse().ok()).unwrap_or(0);
                    let tags = q.get("fault_tags").map_or(DEFAULT_FAULT_TAGS, String::as_str);
                    let injector = Arc::new(FaultInjector::new(
                        provider,
                        rate,
                        seed,
                        tags.split(',').filter(|t| !t.is_empty()).map(String::from).collect(),
                    ));
                    self.injectors.lock().unwrap().push(Arc::clone(&injector));
                    provider = injector;
                }
                Ok(ResourceHandle::from_model(desc.clone(), provider))
            }
            (ResourceKind::Model, "http" | "https") => {
                let secret = match &desc.auth {
                    Some(name) => {
                        let var = name.strip_prefix("env:").unwrap_or(name);
                        Some(std::env::var(var).map_err(|_| ResourceError::AuthMissing(var.to_string()))?)
                    }
                    None => None,
                };
                Ok(ResourceHandle::from_model(desc.clone(), Arc::new(HttpProvider::new(desc, secret))))
            }
            (ResourceKind::Model, s) => match self.custom.get(s) {
                Some(p) => Ok(ResourceHandle::from_model(desc.clone(), Arc::clone(p))),
                None => Err(no_provider()),
            },
            (ResourceKind::Tool, "builtin") => builtin_tool(path)
                .map(|t| ResourceHandle::from_tool(desc.clone(), t))
                .ok_or_else(no_provider),
            (ResourceKind::Data, "file") => Ok(ResourceHandle::from_data(desc.clone(), PathBuf::from(path))),
            _ => Err(no_provider()),
        }
    }

    fn fixture(&self, name: &str) -> Result<MockFixture, ResourceError> {
        if let Some(f) = self.fixtures.get(name) {
            return Ok(f.clone());
        }
        let Some(root) = &self.fixture_root else {
            return Err(ResourceError::Io {
                path: name.to_string(),
                message: "no mock fixture registered and no fixture root set".into(),
            });
        };
        load_fixture(&root.join(format!("{name}.json")))
    }
}

pub(crate) fn load_fixture(path: &Path) -> Result<MockFixture, ResourceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ResourceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    MockFixture::from_json(&text)
}

fn parse_query(q: &str) -> BTreeMap<String, String> {
    q.split('&')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
