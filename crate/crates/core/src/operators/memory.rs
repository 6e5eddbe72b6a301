use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{OperatorError, VersionTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Observation,
    Goal,
    Plan,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub agent_id: String,
    pub seq: u64,
    pub kind: MemoryKind,
    pub body: String,
    pub chapter_version: VersionTag,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryFilter {
    pub kind: Option<MemoryKind>,
    /// Only records with `seq` strictly greater than this.
    pub since_seq: Option<u64>,
    pub chapter_version: Option<VersionTag>,
}

impl MemoryFilter {
    pub fn kind(kind: MemoryKind) -> Self {
        Self {
            kind: Some(kind),
            ..Self::default()
        }
    }

    pub fn since(seq: u64) -> Self {
        Self {
            since_seq: Some(seq),
            ..Self::default()
        }
    }

    fn matches(&self, r: &MemoryRecord) -> bool {
        self.kind.is_none_or(|k| r.kind == k)
            && self.since_seq.is_none_or(|s| r.seq > s)
            && self.chapter_version.is_none_or(|v| r.chapter_version == v)
    }
}

/// Per-agent append-only record lists. Sequence numbers start at 1.
#[derive(Debug, Default)]
pub struct MemoryStore {
    records: RwLock<BTreeMap<String, Vec<MemoryRecord>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, agent_id: &str, kind: MemoryKind, body: impl Into<String>, chapter_version: VersionTag) -> u64 {
        let mut all = self.records.write().unwrap();
        let list = all.entry(agent_id.to_string()).or_default();
        let seq = list.last().map_or(1, |r| r.seq + 1);
        list.push(MemoryRecord {
            agent_id: agent_id.to_string(),
            seq,
            kind,
            body: body.into(),
            chapter_version,
        });
        seq
    }

    /// Matching records in sequence order. An agent never written to has no
    /// records rather than being an error.
    pub fn query(&self, agent_id: &str, filter: &MemoryFilter) -> Vec<MemoryRecord> {
        self.records
            .read()
            .unwrap()
            .get(agent_id)
            .map(|list| list.iter().filter(|r| filter.matches(r)).cloned().collect())
            .unwrap_or_default()
    }

    /// The last `n` records of an agent, oldest first.
    pub fn recent(&self, agent_id: &str, n: usize) -> Vec<MemoryRecord> {
        let all = self.query(agent_id, &MemoryFilter::default());
        all[all.len().saturating_sub(n)..].to_vec()
    }

    pub fn agents(&self) -> Vec<String> {
        self.records.read().unwrap().keys().cloned().collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&*self.records.read().unwrap()).expect("records serialize")
    }

    pub fn save(&self, path: &Path) -> Result<(), OperatorError> {
        std::fs::write(path, self.to_json()).map_err(|e| OperatorError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, OperatorError> {
        let text = std::fs::read_to_string(path).map_err(|e| OperatorError::Io(format!("{}: {e}", path.display())))?;
        let records = serde_json::from_str(&text).map_err(|e| OperatorError::Corrupt(e.to_string()))?;
        Ok(Self {
            records: RwLock::new(records),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seqs_and_filters() {
        let m = MemoryStore::new();
        let v0 = VersionTag(0);
        assert_eq!(m.append("a", MemoryKind::Goal, "g1", v0), 1);
        assert_eq!(m.append("a", MemoryKind::Plan, "p1", v0), 2);
        assert_eq!(m.append("a", MemoryKind::Goal, "g2", VersionTag(1)), 3);
        assert_eq!(m.append("b", MemoryKind::Goal, "other", v0), 1);
        let goals: Vec<_> = m.query("a", &MemoryFilter::kind(MemoryKind::Goal)).into_iter().map(|r| r.body).collect();
        assert_eq!(goals, ["g1", "g2"]);
        assert!(m.query("nobody", &MemoryFilter::default()).is_empty());
        let f = MemoryFilter {
            chapter_version: Some(v0),
            ..MemoryFilter::default()
        };
        assert_eq!(m.query("a", &f).len(), 2);
        assert_eq!(m.recent("a", 2).iter().map(|r| r.seq).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn save_and_load() {
        let m = MemoryStore::new();
        m.append("a", MemoryKind::Outcome, "done", VersionTag(2));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mem.json");
        m.save(&p).unwrap();
        let back = MemoryStore::load(&p).unwrap();
        assert_eq!(back.query("a", &MemoryFilter::default()), m.query("a", &MemoryFilter::default()));
    }
}
