use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OperatorError;

/// Position on a key's linear version chain, printed as `v<N>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VersionTag(pub u64);

impl VersionTag {
    pub const ROOT: VersionTag = VersionTag(0);

    pub fn next(self) -> Self {
        VersionTag(self.0 + 1)
    }

    pub fn parent(self) -> Option<Self> {
        self.0.checked_sub(1).map(VersionTag)
    }
}

impl fmt::Display for VersionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl FromStr for VersionTag {
    type Err = OperatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('v')
            .filter(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|n| n.parse().ok())
            .map(VersionTag)
            .ok_or_else(|| OperatorError::InvalidVersion(s.to_string()))
    }
}

impl Serialize for VersionTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VersionTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionedDocument {
    pub key: String,
    pub version: VersionTag,
    pub parent: Option<VersionTag>,
    pub body: Vec<u8>,
    /// Microseconds since the Unix epoch.
    pub committed_at: u64,
}

impl VersionedDocument {
    pub fn body_str(&self) -> Result<&str, OperatorError> {
        std::str::from_utf8(&self.body).map_err(|e| OperatorError::Corrupt(format!("{}@{}: {e}", self.key, self.version)))
    }

    pub fn body_json(&self) -> Result<serde_json::Value, OperatorError> {
        serde_json::from_slice(&self.body)
            .map_err(|e| OperatorError::Corrupt(format!("{}@{}: {e}", self.key, self.version)))
    }

    pub fn sha256(&self) -> String {
        sha256_hex(&self.body)
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub version: VersionTag,
    pub file: String,
    pub sha256: String,
    pub parent: Option<VersionTag>,
    pub ts: u64,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

/// Append-only store of linear version chains with optimistic concurrency.
pub trait DocumentStore: Send + Sync {
    /// Creates `key` with `body` as `v0`.
    fn init(&self, key: &str, body: &[u8]) -> Result<VersionTag, OperatorError>;
    /// The requested version, or the head when `version` is `None`.
    fn get(&self, key: &str, version: Option<VersionTag>) -> Result<VersionedDocument, OperatorError>;
    /// Appends `body` after `parent`, which must be the current head.
    fn commit(&self, key: &str, body: &[u8], parent: VersionTag) -> Result<VersionTag, OperatorError>;
    fn history(&self, key: &str) -> Result<Vec<ChainEntry>, OperatorError>;
    fn keys(&self) -> Vec<String>;

    fn head(&self, key: &str) -> Result<VersionTag, OperatorError> {
        self.history(key)?
            .last()
            .map(|e| e.version)
            .ok_or_else(|| OperatorError::KeyNotFound(key.to_string()))
    }
}

pub(crate) fn check_key(key: &str) -> Result<(), OperatorError> {
    let ok = !key.is_empty()
        && key.split('/').all(|seg| {
            !seg.is_empty()
                && seg != "."
                && seg != ".."
                && seg.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        });
    if ok {
        Ok(())
    } else {
        Err(OperatorError::InvalidKey(key.to_string()))
    }
}

fn stale(key: &str, parent: VersionTag, head: VersionTag) -> OperatorError {
    OperatorError::StaleParent {
        key: key.to_string(),
        parent,
        head,
    }
}

#[derive(Default)]
pub struct InMemoryStore {
    chains: RwLock<BTreeMap<String, Arc<Mutex<Vec<VersionedDocument>>>>>,
}

impl InMemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn chain(&self, key: &str) -> Result<Arc<Mutex<Vec<VersionedDocument>>>, OperatorError> {
        self.chains
            .read()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| OperatorError::KeyNotFound(key.to_string()))
    }
}

impl DocumentStore for InMemoryStore {
    fn init(&self, key: &str, body: &[u8]) -> Result<VersionTag, OperatorError> {
        check_key(key)?;
        let mut chains = self.chains.write().unwrap();
        if chains.contains_key(key) {
            return Err(OperatorError::KeyExists(key.to_string()));
        }
        let doc = VersionedDocument {
            key: key.to_string(),
            version: VersionTag::ROOT,
            parent: None,
            body: body.to_vec(),
            committed_at: now_micros(),
        };
        chains.insert(key.to_string(), Arc::new(Mutex::new(vec![doc])));
        Ok(VersionTag::ROOT)
    }

    fn get(&self, key: &str, version: Option<VersionTag>) -> Result<VersionedDocument, OperatorError> {
        let chain = self.chain(key)?;
        let chain = chain.lock().unwrap();
        let doc = match version {
            None => chain.last(),
            Some(v) => chain.get(v.0 as usize),
        };
        doc.cloned().ok_or_else(|| OperatorError::VersionNotFound {
            key: key.to_string(),
            version: version.unwrap_or_default(),
        })
    }

    fn commit(&self, key: &str, body: &[u8], parent: VersionTag) -> Result<VersionTag, OperatorError> {
        let chain = self.chain(key)?;
        let mut chain = chain.lock().unwrap();
        let head = chain.last().expect("chains start at v0").version;
        if head != parent {
            return Err(stale(key, parent, head));
        }
        let version = head.next();
        chain.push(VersionedDocument {
            key: key.to_string(),
            version,
            parent: Some(parent),
            body: body.to_vec(),
            committed_at: now_micros(),
        });
        Ok(version)
    }

    fn history(&self, key: &str) -> Result<Vec<ChainEntry>, OperatorError> {
        let chain = self.chain(key)?;
        let chain = chain.lock().unwrap();
        Ok(chain
            .iter()
            .map(|d| ChainEntry {
                version: d.version,
                file: format!("{}.bin", d.version),
                sha256: d.sha256(),
                parent: d.parent,
                ts: d.committed_at,
            })
            .collect())
    }

    fn keys(&self) -> Vec<String> {
        self.chains.read().unwrap().keys().cloned().collect()
    }
}

impl Default for VersionTag {
    fn default() -> Self {
        VersionTag::ROOT
    }
}

const MANIFEST: &str = "manifest.json";

/// Directory-backed store: `<root>/<key>/manifest.json` holds the chain and
/// `<root>/<key>/v<N>.bin` the bodies. Commits to one key are serialized
/// within the process; different keys commit in parallel.
pub struct FsStore {
    root: PathBuf,
    locks: Mutex<BTreeMap<String, Arc<Mutex<()>>>>,
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, OperatorError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self {
            root,
            locks: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        Arc::clone(self.locks.lock().unwrap().entry(key.to_string()).or_default())
    }

    fn dir(&self, key: &str) -> Result<PathBuf, OperatorError> {
        check_key(key)?;
        Ok(self.root.join(key))
    }

    fn read_manifest(&self, key: &str) -> Result<Vec<ChainEntry>, OperatorError> {
        let path = self.dir(key)?.join(MANIFEST);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(OperatorError::KeyNotFound(key.to_string()))
            }
            Err(e) => return Err(io_err(&path, e)),
        };
        serde_json::from_str(&text).map_err(|e| OperatorError::Corrupt(format!("{}: {e}", path.display())))
    }

    fn append(&self, key: &str, body: &[u8], parent: Option<VersionTag>, mut chain: Vec<ChainEntry>) -> Result<VersionTag, OperatorError> {
        let dir = self.dir(key)?;
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let version = parent.map_or(VersionTag::ROOT, VersionTag::next);
        let file = format!("{version}.bin");
        let body_path = dir.join(&file);
        std::fs::write(&body_path, body).map_err(|e| io_err(&body_path, e))?;
        chain.push(ChainEntry {
            version,
            file,
            sha256: sha256_hex(body),
            parent,
            ts: now_micros(),
        });
        let tmp = dir.join(format!("{MANIFEST}.tmp"));
        let text = serde_json::to_string_pretty(&chain).expect("manifest serializes");
        std::fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        let manifest = dir.join(MANIFEST);
        std::fs::rename(&tmp, &manifest).map_err(|e| io_err(&manifest, e))?;
        Ok(version)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> OperatorError {
    OperatorError::Io(format!("{}: {e}", path.display()))
}

impl DocumentStore for FsStore {
    fn init(&self, key: &str, body: &[u8]) -> Result<VersionTag, OperatorError> {
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();
        match self.read_manifest(key) {
            Ok(_) => Err(OperatorError::KeyExists(key.to_string())),
            Err(OperatorError::KeyNotFound(_)) => self.append(key, body, None, Vec::new()),
            Err(e) => Err(e),
        }
    }

    fn get(&self, key: &str, version: Option<VersionTag>) -> Result<VersionedDocument, OperatorError> {
        let chain = self.read_manifest(key)?;
        let entry = match version {
            None => chain.last(),
            Some(v) => chain.iter().find(|e| e.version == v),
        }
        .ok_or_else(|| OperatorError::VersionNotFound {
            key: key.to_string(),
            version: version.unwrap_or_default(),
        })?;
        let path = self.dir(key)?.join(&entry.file);
        let body = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        if sha256_hex(&body) != entry.sha256 {
            return Err(OperatorError::Corrupt(format!("{} does not match its manifest hash", path.display())));
        }
        Ok(VersionedDocument {
            key: key.to_string(),
            version: entry.version,
            parent: entry.parent,
            body,
            committed_at: entry.ts,
        })
    }

    fn commit(&self, key: &str, body: &[u8], parent: VersionTag) -> Result<VersionTag, OperatorError> {
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();
        let chain = self.read_manifest(key)?;
        let head = chain.last().map(|e| e.version).unwrap_or_default();
        if head != parent {
            return Err(stale(key, parent, head));
        }
        self.append(key, body, Some(parent), chain)
    }

    fn history(&self, key: &str) -> Result<Vec<ChainEntry>, OperatorError> {
        self.read_manifest(key)
    }

    fn keys(&self) -> Vec<String> {
        fn walk(dir: &Path, prefix: &str, out: &mut Vec<String>) {
            let Ok(entries) = std::fs::read_dir(dir) else { return };
            let mut subdirs: Vec<_> = entries.filter_map(Result::ok).filter(|e| e.path().is_dir()).collect();
            subdirs.sort_by_key(|e| e.file_name());
            for e in subdirs {
                let name = e.file_name().to_string_lossy().into_owned();
                let key = if prefix.is_empty() { name } else { format!("{prefix}/{name}") };
                if e.path().join(MANIFEST).is_file() {
                    out.push(key.clone());
                }
                walk(&e.path(), &key, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, "", &mut out);
        out.sort();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(store: &dyn DocumentStore) {
        assert_eq!(store.init("world", b"w0").unwrap(), VersionTag(0));
        assert!(matches!(store.init("world", b"x"), Err(OperatorError::KeyExists(_))));
        assert_eq!(store.get("world", Some(VersionTag(0))).unwrap().body, b"w0");
        for i in 1..=3u64 {
            let v = store.commit("world", format!("w{i}").as_bytes(), VersionTag(i - 1)).unwrap();
            assert_eq!(v, VersionTag(i));
        }
        assert_eq!(store.get("world", None).unwrap().body, b"w3");
        assert!(matches!(
            store.get("world", Some(VersionTag(9))),
            Err(OperatorError::VersionNotFound { .. })
        ));
        assert!(matches!(
            store.commit("world", b"late", VersionTag(0)),
            Err(OperatorError::StaleParent { head: VersionTag(3), .. })
        ));
        assert!(matches!(store.get("nope", None), Err(OperatorError::KeyNotFound(_))));
        assert!(matches!(store.commit("nope", b"", VersionTag(0)), Err(OperatorError::KeyNotFound(_))));
        store.init("char/alice", b"{}").unwrap();
        assert_eq!(store.keys(), vec!["char/alice", "world"]);
        let h = store.history("world").unwrap();
        assert_eq!(h.iter().map(|e| e.version.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(h[2].parent, Some(VersionTag(1)));
        assert_eq!(h[0].sha256, sha256_hex(b"w0"));
        assert!(matches!(store.init("../escape", b""), Err(OperatorError::InvalidKey(_))));
    }

    #[test]
    fn in_memory_contract() {
        exercise(&InMemoryStore::new());
    }

    #[test]
    fn fs_contract_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        exercise(&store);
        assert!(dir.path().join("world/manifest.json").is_file());
        assert_eq!(std::fs::read(dir.path().join("world/v2.bin")).unwrap(), b"w2");
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("world/manifest.json")).unwrap()).unwrap();
        let keys: Vec<&str> = manifest[1].as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["file", "parent", "sha256", "ts", "version"]);
        assert_eq!(manifest[1]["version"], "v1");
        // reopening sees the same chain
        let again = FsStore::open(dir.path()).unwrap();
        assert_eq!(again.head("world").unwrap(), VersionTag(3));
    }

    #[test]
    fn tampered_body_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        store.init("k", b"original").unwrap();
        std::fs::write(dir.path().join("k/v0.bin"), b"changed").unwrap();
        assert!(matches!(store.get("k", None), Err(OperatorError::Corrupt(_))));
    }

    #[test]
    fn version_tag_text() {
        assert_eq!("v12".parse::<VersionTag>().unwrap(), VersionTag(12));
        assert!("12".parse::<VersionTag>().is_err());
        assert!("v".parse::<VersionTag>().is_err());
        assert!("v-1".parse::<VersionTag>().is_err());
        assert_eq!(VersionTag(3).parent(), Some(VersionTag(2)));
        assert_eq!(VersionTag(0).parent(), None);
    }
}
