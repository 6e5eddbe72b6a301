use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CreagentiveError;
use crate::dnf::{DnfModel, PredicateManifest, ACCEPT_LABEL};
use crate::operators::{DocumentStore, MemoryKind, MemoryStore, VersionTag};

pub const WORLD_KEY: &str = "world";

pub fn character_key(character_id: &str) -> String {
    format!("char/{character_id}")
}

/// How a milestone is judged complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompletionPredicate {
    /// The value at a JSON pointer into the world document equals `value`.
    FieldEquals { pointer: String, value: Value },
    /// The value at a JSON pointer exists and is not null.
    Exists { pointer: String },
    ChapterAtLeast { n: usize },
    /// Asked of the backend as a yes/no question; satisfied when the truth
    /// value is strictly positive.
    Llm { question: String },
}

impl CompletionPredicate {
    pub fn is_rule(&self) -> bool {
        !matches!(self, CompletionPredicate::Llm { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Milestone {
    pub milestone_id: String,
    pub description: String,
    pub completion_predicate: CompletionPredicate,
    /// Characters that plan while this milestone is open; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participants: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outline {
    pub title: String,
    pub milestones: Vec<Milestone>,
    pub ending_condition: Vec<String>,
}

impl Outline {
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut ids = BTreeSet::new();
        for m in &self.milestones {
            if !ids.insert(m.milestone_id.as_str()) {
                problems.push(format!("duplicate milestone `{}`", m.milestone_id));
            }
        }
        for id in &self.ending_condition {
            if !ids.contains(id.as_str()) {
                problems.push(format!("ending condition names unknown milestone `{id}`"));
            }
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterProfile {
    pub character_id: String,
    pub name: String,
    #[serde(default)]
    pub traits: Vec<String>,
    #[serde(default)]
    pub initial_state: Value,
}

/// One entry of an optional `memories/<character_id>.json` archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchivedMemory {
    pub kind: MemoryKind,
    pub body: String,
}

/// Everything read from a project directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub dir: PathBuf,
    pub outline: Outline,
    pub environment: Value,
    /// Sorted by character id.
    pub characters: Vec<CharacterProfile>,
    pub predicates: PredicateManifest,
    pub decision_model: DnfModel,
    pub memories: BTreeMap<String, Vec<ArchivedMemory>>,
}

fn read_json<T: DeserializeOwned>(path: &Path, name: &str) -> Result<T, CreagentiveError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CreagentiveError::MissingFile(name.to_string()),
        _ => CreagentiveError::Io(format!("{}: {e}", path.display())),
    })?;
    serde_json::from_str(&text).map_err(|e| CreagentiveError::SchemaError {
        file: name.to_string(),
        violations: vec![e.to_string()],
    })
}

fn read_optional<T: DeserializeOwned>(path: &Path, name: &str) -> Result<Option<T>, CreagentiveError> {
    if path.exists() {
        read_json(path, name).map(Some)
    } else {
        Ok(None)
    }
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CreagentiveError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CreagentiveError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Decision model used when the project ships none: per atom one clause
/// `accept <- atom` and one clause `reject <- not atom`, gates saturated.
pub fn default_decision_model(n_atoms: usize) -> DnfModel {
    const ON: f64 = 40.0;
    let n_clauses = (2 * n_atoms).max(1);
    let mut m = DnfModel::filled(n_atoms, n_clauses, 2, -ON);
    for a in 0..n_atoms {
        m.set_conj_raw(a, a, ON);
        m.set_disj_raw(ACCEPT_LABEL, a, ON);
        m.set_conj_raw(n_atoms + a, n_atoms + a, ON);
        m.set_disj_raw(1 - ACCEPT_LABEL, n_atoms + a, ON);
    }
    m
}

impl Project {
    /// Reads `outline.json`, `environment.json`, `characters/*.json` and the
    /// optional `predicates.json`, `decision.json` and `memories/*.json`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, CreagentiveError> {
        let dir = dir.as_ref();
        let outline: Outline = read_json(&dir.join("outline.json"), "outline.json")?;
        let environment: Value = read_json(&dir.join("environment.json"), "environment.json")?;
        if !environment.is_object() {
            return Err(CreagentiveError::SchemaError {
                file: "environment.json".into(),
                violations: vec!["must be a JSON object".into()],
            });
        }
        let char_dir = dir.join("characters");
        if !char_dir.is_dir() {
            return Err(CreagentiveError::MissingFile("characters/".into()));
        }
        let mut characters = Vec::new();
        for path in json_files(&char_dir)? {
            let name = format!("characters/{}", path.file_name().unwrap_or_default().to_string_lossy());
            characters.push(read_json::<CharacterProfile>(&path, &name)?);
        }
        characters.sort_by(|a, b| a.character_id.cmp(&b.character_id));
        let predicates: PredicateManifest = read_optional(&dir.join("predicates.json"), "predicates.json")?.unwrap_or_default();
        let decision_model = match read_optional::<Value>(&dir.join("decision.json"), "decision.json")? {
            Some(v) => DnfModel::from_json(&v.to_string()).map_err(|e| CreagentiveError::SchemaError {
                file: "decision.json".into(),
                violations: vec![e.to_string()],
            })?,
            None => default_decision_model(predicates.len()),
        };
        let mut memories = BTreeMap::new();
        let mem_dir = dir.join("memories");
        if mem_dir.is_dir() {
            for path in json_files(&mem_dir)? {
                let id = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
                let name = format!("memories/{id}.json");
                memories.insert(id, read_json::<Vec<ArchivedMemory>>(&path, &name)?);
            }
        }
        let project = Self {
            dir: dir.to_path_buf(),
            outline,
            environment,
            characters,
            predicates,
            decision_model,
            memories,
        };
        project.check()?;
        Ok(project)
    }

    fn check(&self) -> Result<(), CreagentiveError> {
        let outline = self.outline.check();
        if !outline.is_empty() {
            return Err(CreagentiveError::SchemaError {
                file: "outline.json".into(),
                violations: outline,
            });
        }
        let mut problems = Vec::new();
        let mut ids = BTreeSet::new();
        for c in &self.characters {
            if !ids.insert(c.character_id.as_str()) {
                problems.push(format!("duplicate character id `{}`", c.character_id));
            }
        }
        if self.characters.is_empty() {
            problems.push("no character profiles".into());
        }
        for m in &self.outline.milestones {
            for p in m.participants.iter().flatten() {
                if !ids.contains(p.as_str()) {
                    problems.push(format!("milestone `{}` names unknown character `{p}`", m.milestone_id));
                }
            }
        }
        for id in self.memories.keys() {
            if !ids.contains(id.as_str()) {
                problems.push(format!("memory archive for unknown character `{id}`"));
            }
        }
        if !problems.is_empty() {
            return Err(CreagentiveError::SchemaError {
                file: "characters/".into(),
                violations: problems,
            });
        }
        if self.decision_model.n_atoms != self.predicates.len() {
            return Err(CreagentiveError::SchemaError {
                file: "decision.json".into(),
                violations: vec![format!(
                    "model expects {} atoms, predicates.json binds {}",
                    self.decision_model.n_atoms,
                    self.predicates.len()
                )],
            });
        }
        Ok(())
    }

    pub fn character(&self, id: &str) -> Option<&CharacterProfile> {
        self.characters.iter().find(|c| c.character_id == id)
    }

    /// Environment for output validation: the character names.
    pub fn validation_env(&self) -> Value {
        let names: Vec<Value> = self.characters.iter().map(|c| serde_json::json!({ "name": c.name })).collect();
        serde_json::json!({ "characters": names })
    }
}

/// Mutable story bookkeeping carried between chapters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoryState {
    pub chapter_index: usize,
    pub world_version: VersionTag,
    pub character_versions: BTreeMap<String, VersionTag>,
    /// Milestones recorded as satisfied; never shrinks.
    pub satisfied: BTreeSet<String>,
    pub done: bool,
}

/// Commits the environment as `world@v0` and each character's initial state
/// as `char/<id>@v0`, and loads memory archives.
pub fn initialize(
    project: &Project,
    store: &dyn DocumentStore,
    memory: &MemoryStore,
) -> Result<StoryState, CreagentiveError> {
    let world = project.environment.to_string();
    let world_version = store.init(WORLD_KEY, world.as_bytes())?;
    let mut character_versions = BTreeMap::new();
    for c in &project.characters {
        let v = store.init(&character_key(&c.character_id), c.initial_state.to_string().as_bytes())?;
        character_versions.insert(c.character_id.clone(), v);
    }
    for (id, records) in &project.memories {
        for r in records {
            memory.append(id, r.kind, r.body.clone(), world_version);
        }
    }
    Ok(StoryState {
        chapter_index: 0,
        world_version,
        character_versions,
        satisfied: BTreeSet::new(),
        done: false,
    })
}
