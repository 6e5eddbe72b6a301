use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;
use serde_json::{json, Value};

use super::chapter::{check_ending, commit_state, write_chapter, Chapter};
use super::plan::{generate_candidates, unmet_milestones, Trajectory};
use super::project::{initialize, Project, StoryState, WORLD_KEY};
use super::{CreagentiveError, Story, StorySettings};
use crate::dnf::{select_trajectory, ACCEPT_LABEL};
use crate::engine::{
    events_to_ndjson, execute, DispatchError, ExecuteOptions, ExecutionContext, ExecutionEvent, OperatorDispatcher,
    StrategyParams, SystemClock, TaskResult, WorkflowInstance,
};
use crate::operators::{DocumentStore, FsStore, MemoryStore, StandardDispatcher, VersionTag};
use crate::registry::{AgentRegistry, AgentSpecification, FnAgent};
use crate::resources::{ResourceCatalog, ResourceDescriptor, ResourceKind, Resolver};
use crate::workflow::{instantiate_workflow, parse_task_request, OperatorKind, TaskNode, TaskRequest, TemplateCatalog, WorkflowSpec};

const TEMPLATE_KIND: &str = "novel-generation";
const DEFAULT_BACKEND: &str = "mock-llm";

/// Seed offsets inside one chapter for the steps that call the backend.
const WRITER_OFFSET: u64 = 5_000;
const ENDING_OFFSET: u64 = 9_000;

#[derive(Clone)]
pub struct RunConfig {
    pub project_dir: PathBuf,
    pub out_dir: PathBuf,
    pub n_candidates: usize,
    pub max_chapters: usize,
    pub seed: u64,
    /// Resource id of the model backend.
    pub backend: String,
    /// Overrides `resources.json` in the project directory.
    pub catalog: Option<ResourceCatalog>,
    /// Overrides the default resolver reading mock fixtures from `fixtures/`.
    pub resolver: Option<Arc<Resolver>>,
    pub keep_losers: bool,
    pub settings: StorySettings,
}

impl RunConfig {
    pub fn new(project_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            project_dir: project_dir.into(),
            out_dir: out_dir.into(),
            n_candidates: 3,
            max_chapters: 50,
            seed: 0,
            backend: DEFAULT_BACKEND.into(),
            catalog: None,
            resolver: None,
            keep_losers: false,
            settings: StorySettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NovelResult {
    pub title: String,
    pub chapters: Vec<Chapter>,
    pub final_env_version: VersionTag,
    pub events_path: PathBuf,
    pub truncated: bool,
    pub satisfied_milestones: Vec<String>,
    /// `world` bodies captured at commit time; index is the version.
    pub world_snapshots: Vec<String>,
    pub injected_faults: u64,
    #[serde(skip)]
    pub events: Vec<ExecutionEvent>,
}

/// Live state of one story shared by the dispatcher and its agents.
pub struct StoryRun {
    pub story: Story,
    seed: u64,
    keep_losers: bool,
    state: Mutex<StoryState>,
    chapters: Mutex<Vec<Chapter>>,
    snapshots: Mutex<Vec<String>>,
    losers: Mutex<Vec<Trajectory>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl StoryRun {
    pub fn new(story: Story, state: StoryState, seed: u64, keep_losers: bool) -> Result<Self, CreagentiveError> {
        let v0 = story.store.get(WORLD_KEY, Some(state.world_version))?.body_str()?.to_string();
        Ok(Self {
            story,
            seed,
            keep_losers,
            state: Mutex::new(state),
            chapters: Mutex::new(Vec::new()),
            snapshots: Mutex::new(vec![v0]),
            losers: Mutex::new(Vec::new()),
        })
    }

    pub fn state(&self) -> StoryState {
        lock(&self.state).clone()
    }

    pub fn chapters(&self) -> Vec<Chapter> {
        lock(&self.chapters).clone()
    }

    pub fn losers(&self) -> Vec<Trajectory> {
        lock(&self.losers).clone()
    }

    /// Base seed for chapter `k`; node retries shift it so they draw fresh samples.
    fn chapter_seed(&self, k: usize, attempt: u32) -> u64 {
        self.seed
            .wrapping_add(100_000u64.wrapping_mul(k as u64))
            .wrapping_add(100u64.wrapping_mul(u64::from(attempt.saturating_sub(1))))
    }
}

fn trajectories(inputs: &Value) -> Result<Vec<Trajectory>, String> {
    serde_json::from_value(inputs["gen-candidates"]["trajectories"].clone()).map_err(|e| format!("trajectories: {e}"))
}

fn winner(inputs: &Value) -> Result<Trajectory, String> {
    let all = trajectories(inputs)?;
    let w = inputs["decide"]["output"]["winner"]
        .as_u64()
        .ok_or("decide output lacks `winner`")? as usize;
    all.into_iter().nth(w).ok_or_else(|| format!("winner {w} out of range"))
}

/// Registry with the in-process decision, writer and ending agents of one
/// story, discoverable by `select-trajectory`, `write-chapter` and
/// `check-ending`.
pub fn story_registry(run: &Arc<StoryRun>) -> Result<Arc<AgentRegistry>, CreagentiveError> {
    let registry = Arc::new(AgentRegistry::new());
    let r = Arc::clone(run);
    registry.bind(
        "decision",
        Arc::new(FnAgent::new(move |input: &Value, _ctx: &ExecutionContext| {
            let all = trajectories(input)?;
            let atoms: Vec<Vec<f64>> = all.iter().map(|t| t.atom_values.clone()).collect();
            let sel = select_trajectory(&r.story.project.decision_model, &atoms, ACCEPT_LABEL).map_err(|e| e.to_string())?;
            Ok(json!({
                "winner": sel.winner,
                "trajectory_id": all[sel.winner].trajectory_id,
                "z": sel.z,
            }))
        })),
    );
    let r = Arc::clone(run);
    registry.bind(
        "writer",
        Arc::new(FnAgent::new(move |input: &Value, ctx: &ExecutionContext| {
            let t = winner(input)?;
            let k = r.state().chapter_index + 1;
            let seed = r.chapter_seed(k, ctx.attempt).wrapping_add(WRITER_OFFSET);
            let chapter = write_chapter(&r.story, &t, k, seed, ctx).map_err(|e| e.to_string())?;
            serde_json::to_value(chapter).map_err(|e| e.to_string())
        })),
    );
    let r = Arc::clone(run);
    registry.bind(
        "ending",
        Arc::new(FnAgent::new(move |_input: &Value, ctx: &ExecutionContext| {
            let mut state = lock(&r.state);
            let seed = r.chapter_seed(state.chapter_index, ctx.attempt).wrapping_add(ENDING_OFFSET);
            let check = check_ending(&r.story, &state, seed).map_err(|e| e.to_string())?;
            state.satisfied.clone_from(&check.satisfied_milestones);
            state.done = check.done;
            serde_json::to_value(check).map_err(|e| e.to_string())
        })),
    );
    for (name, capability, callable) in [
        ("decision-agent", "select-trajectory", "decision"),
        ("writer-agent", "write-chapter", "writer"),
        ("ending-agent", "check-ending", "ending"),
    ] {
        let d = registry.publish(&AgentSpecification::new(name, "1.0.0", [capability]))?;
        registry.register(&d.agent_id, &format!("inproc:{callable}"))?;
    }
    Ok(registry)
}

/// Runs the `novel-generation` nodes of one story. Task-management nodes go
/// through the standard dispatcher and the story's registry.
pub struct CreAgentiveDispatcher {
    run: Arc<StoryRun>,
    standard: StandardDispatcher,
}

impl CreAgentiveDispatcher {
    pub fn new(run: Arc<StoryRun>, registry: Arc<AgentRegistry>) -> Self {
        let standard = StandardDispatcher::new()
            .with_store(Arc::clone(&run.story.store))
            .with_memory(Arc::clone(&run.story.memory))
            .with_registry(registry)
            .with_resource(run.story.backend.clone());
        Self { run, standard }
    }

    fn step(&self, node: &TaskNode, ctx: &ExecutionContext) -> Result<Value, CreagentiveError> {
        let run = &self.run;
        let story = &run.story;
        match node.param_str("step") {
            Some("load-env") => {
                let state = run.state();
                let doc = story.store.get(WORLD_KEY, Some(state.world_version))?;
                Ok(json!({
                    "chapter": state.chapter_index + 1,
                    "version": doc.version,
                    "env": doc.body_json()?,
                }))
            }
            Some("gen-goals") => {
                let state = run.state();
                let window = node.params.get("memory_window").and_then(Value::as_u64).map_or(story.settings.memory_window, |w| w as usize);
                let open: Vec<&str> = unmet_milestones(&story.project.outline, &state)
                    .into_iter()
                    .map(|m| m.milestone_id.as_str())
                    .collect();
                let memories: serde_json::Map<String, Value> = story
                    .project
                    .characters
                    .iter()
                    .map(|c| {
                        let recent = story.memory.recent(&c.character_id, window);
                        (c.character_id.clone(), serde_json::to_value(recent).expect("records serialize"))
                    })
                    .collect();
                Ok(json!({ "open_milestones": open, "memories": memories }))
            }
            Some("gen-candidates") => {
                let state = run.state();
                let n = node
                    .params
                    .get("n_candidates")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| CreagentiveError::InvalidConfig("gen-candidates needs `n_candidates`".into()))?;
                let seed = run.chapter_seed(state.chapter_index + 1, ctx.attempt);
                let ts = generate_candidates(story, &state, n as usize, seed, ctx)?;
                Ok(json!({ "trajectories": ts }))
            }
            Some("commit") => {
                let inputs = serde_json::to_value(&ctx.inputs).expect("inputs serialize");
                let chapter: Chapter = serde_json::from_value(inputs["write"]["output"].clone())
                    .map_err(|e| CreagentiveError::Internal(format!("write output: {e}")))?;
                let winner = winner(&inputs).map_err(CreagentiveError::Internal)?;
                let mut state = lock(&run.state);
                let next = commit_state(story, &state, &chapter, &winner)?;
                *state = next;
                let body = story.store.get(WORLD_KEY, Some(state.world_version))?.body_str()?.to_string();
                lock(&run.snapshots).push(body);
                lock(&run.chapters).push(chapter);
                if run.keep_losers {
                    let all = trajectories(&inputs).map_err(CreagentiveError::Internal)?;
                    lock(&run.losers).extend(all.into_iter().filter(|t| t.trajectory_id != winner.trajectory_id));
                }
                Ok(json!({ "version": state.world_version, "chapter": state.chapter_index }))
            }
            other => Err(CreagentiveError::InvalidConfig(format!(
                "node `{}` has unknown step {other:?}",
                node.node_id
            ))),
        }
    }
}

impl OperatorDispatcher for CreAgentiveDispatcher {
    fn supports(&self, kind: OperatorKind) -> bool {
        matches!(
            kind,
            OperatorKind::Environment | OperatorKind::Memory | OperatorKind::Reasoning | OperatorKind::TaskManagement
        )
    }

    fn dispatch(&self, node: &TaskNode, ctx: &ExecutionContext) -> Result<TaskResult, DispatchError> {
        if node.operator_kind == OperatorKind::TaskManagement {
            return self.standard.dispatch(node, ctx);
        }
        self.step(node, ctx).map(TaskResult::new).map_err(DispatchError::from)
    }
}

fn io(path: &Path, e: std::io::Error) -> CreagentiveError {
    CreagentiveError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, body: &str) -> Result<(), CreagentiveError> {
    std::fs::write(path, body).map_err(|e| io(path, e))
}

fn default_catalog() -> ResourceCatalog {
    ResourceCatalog::new(vec![ResourceDescriptor::new(DEFAULT_BACKEND, ResourceKind::Model, "mock://story")])
        .expect("default catalog is valid")
}

fn chapter_spec(config: &RunConfig) -> Result<WorkflowSpec, CreagentiveError> {
    let req = TaskRequest::new("generate a novel")
        .with_option("kind", TEMPLATE_KIND)
        .with_option("n_candidates", config.n_candidates.to_string())
        .with_option("max_chapters", config.max_chapters.to_string())
        .with_option("seed", config.seed.to_string())
        .with_option("backend", config.backend.clone());
    let catalog = TemplateCatalog::builtin();
    let task = parse_task_request(&req, &catalog)?;
    Ok(instantiate_workflow(&task, &catalog)?)
}

fn chapter_markdown(c: &Chapter) -> String {
    format!("## Chapter {}\n\n{}\n", c.chapter_index, c.text)
}

/// Generates a novel: initializes the project into a fresh store under
/// `out_dir/store`, then runs one `novel-generation` workflow per chapter
/// until the ending condition holds or `max_chapters` is reached.
///
/// Writes `chapters/ch<k>.md`, `novel.md`, `run.events.ndjson` and
/// `memory.json` under `out_dir`, plus `losers/` with `keep_losers`.
pub fn run(config: &RunConfig) -> Result<NovelResult, CreagentiveError> {
    if config.n_candidates == 0 || config.max_chapters == 0 {
        return Err(CreagentiveError::InvalidConfig("n_candidates and max_chapters must be at least 1".into()));
    }
    let project = Project::load(&config.project_dir)?;
    let catalog = match &config.catalog {
        Some(c) => c.clone(),
        None => {
            let path = project.dir.join("resources.json");
            if path.exists() {
                ResourceCatalog::load(&path)?
            } else {
                default_catalog()
            }
        }
    };
    let desc = catalog
        .get(&config.backend)
        .ok_or_else(|| CreagentiveError::InvalidConfig(format!("unknown backend resource `{}`", config.backend)))?;
    let resolver = match &config.resolver {
        Some(r) => Arc::clone(r),
        None => Arc::new(Resolver::new().with_fixture_root(project.dir.join("fixtures"))),
    };
    let backend = resolver.resolve(desc)?;
    let spec = chapter_spec(config)?;

    let out = &config.out_dir;
    for sub in ["store", "chapters", "losers"] {
        let p = out.join(sub);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(|e| io(&p, e))?;
        }
    }
    std::fs::create_dir_all(out.join("chapters")).map_err(|e| io(out, e))?;
    let store: Arc<dyn DocumentStore> = Arc::new(FsStore::open(out.join("store"))?);
    let memory = Arc::new(MemoryStore::new());
    let state = initialize(&project, store.as_ref(), &memory)?;
    let story = Story {
        project,
        store,
        memory,
        backend,
        settings: config.settings,
    };
    let run = Arc::new(StoryRun::new(story, state, config.seed, config.keep_losers)?);
    let registry = story_registry(&run)?;
    let dispatcher = CreAgentiveDispatcher::new(Arc::clone(&run), registry);
    let clock = SystemClock::new();
    let strategy = StrategyParams {
        parallelism: 1,
        ..StrategyParams::default()
    };

    let mut events: Vec<ExecutionEvent> = Vec::new();
    let events_path = out.join("run.events.ndjson");
    let mut failure = None;
    for k in 1..=config.max_chapters {
        let instance = WorkflowInstance::new(format!("chapter-{k}"), spec.clone(), strategy)?;
        let opts = ExecuteOptions::seeded(config.seed.wrapping_add(k as u64));
        let result = execute(instance, &dispatcher, &clock, &opts)?;
        for mut e in result.instance.event_log {
            e.seq = events.len() as u64;
            e.node_id = format!("ch{k}/{}", e.node_id);
            events.push(e);
        }
        if let Some((node_id, message)) = result.failures.into_iter().next() {
            failure = Some(CreagentiveError::NodeFailed {
                node_id: format!("ch{k}/{node_id}"),
                message,
            });
            break;
        }
        if run.state().done {
            break;
        }
    }
    write_file(&events_path, &events_to_ndjson(&events))?;
    let memory_path = out.join("memory.json");
    run.story.memory.save(&memory_path)?;
    if let Some(e) = failure {
        return Err(e);
    }

    let chapters = run.chapters();
    let mut novel = format!("# {}\n", run.story.project.outline.title);
    for c in &chapters {
        let body = chapter_markdown(c);
        write_file(&out.join("chapters").join(format!("ch{}.md", c.chapter_index)), &body)?;
        novel.push('\n');
        novel.push_str(&body);
    }
    write_file(&out.join("novel.md"), &novel)?;
    if config.keep_losers {
        let dir = out.join("losers");
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        for t in run.losers() {
            let body = serde_json::to_string_pretty(&t).expect("trajectory serializes");
            write_file(&dir.join(format!("{}.json", t.trajectory_id)), &body)?;
        }
    }
    let state = run.state();
    let world_snapshots = lock(&run.snapshots).clone();
    Ok(NovelResult {
        title: run.story.project.outline.title.clone(),
        chapters,
        final_env_version: state.world_version,
        events_path,
        truncated: !state.done,
        satisfied_milestones: state.satisfied.into_iter().collect(),
        world_snapshots,
        injected_faults: resolver.injected_faults(),
        events,
    })
}
