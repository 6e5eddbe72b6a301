use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use hawk_core::creagentive::{
    check_ending, commit_state, derive_long_term_goals, generate_candidates, generate_short_term_goal, initialize,
    run, write_chapter, Chapter, CharacterProfile, CreagentiveError, GoalSlot, Project, RunConfig, Story,
    StorySettings, StoryState, Trajectory, WORLD_KEY,
};
use hawk_core::dnf::{select_trajectory, ACCEPT_LABEL};
use hawk_core::engine::{EventKind, ExecutionContext, NodeEvent};
use hawk_core::operators::{DocumentStore, InMemoryStore, MemoryKind, MemoryStore, VersionTag};
use hawk_core::resources::{
    Completion, GenerationParams, MockEntry, MockFixture, MockProvider, ModelProvider, ResourceDescriptor,
    ResourceError, ResourceHandle, ResourceKind,
};
use serde_json::{json, Value};

fn stories() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/stories")
}

fn write(dir: &Path, rel: &str, v: &Value) {
    let p = dir.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// One field-equals milestone, two characters.
fn minimal_project(dir: &Path) {
    write(
        dir,
        "outline.json",
        &json!({
            "title": "Minimal",
            "milestones": [{
                "milestone_id": "m1",
                "description": "open the door",
                "completion_predicate": {"type": "field_equals", "pointer": "/entities/door/open", "value": true}
            }],
            "ending_condition": ["m1"]
        }),
    );
    write(dir, "environment.json", &json!({"setting": "a hall", "entities": {"door": {"open": false}}}));
    for (id, name) in [("ann", "Ann"), ("ben", "Ben")] {
        write(
            dir,
            &format!("characters/{id}.json"),
            &json!({"character_id": id, "name": name, "traits": ["calm"], "initial_state": {"hp": 3}}),
        );
    }
}

fn handle(fixture: MockFixture) -> ResourceHandle {
    ResourceHandle::from_model(
        ResourceDescriptor::new("mock-llm", ResourceKind::Model, "mock://test"),
        Arc::new(MockProvider::new(fixture)),
    )
}

fn story_with(project: Project, backend: ResourceHandle, settings: StorySettings) -> (Story, StoryState) {
    let store: Arc<dyn DocumentStore> = Arc::new(InMemoryStore::new());
    let memory = Arc::new(MemoryStore::new());
    let state = initialize(&project, store.as_ref(), &memory).unwrap();
    let story = Story {
        project,
        store,
        memory,
        backend,
        settings,
    };
    (story, state)
}

fn minimal_story(fixture: MockFixture) -> (tempfile::TempDir, Story, StoryState) {
    let dir = tempfile::tempdir().unwrap();
    minimal_project(dir.path());
    let project = Project::load(dir.path()).unwrap();
    let (story, state) = story_with(project, handle(fixture), StorySettings::default());
    (dir, story, state)
}

fn kinds(log: &Arc<std::sync::RwLock<Vec<NodeEvent>>>) -> Vec<EventKind> {
    log.read().unwrap().iter().map(|e| e.kind).collect()
}

const GOOD_GOAL: &str = "1. assess\n2. act\nANSWER: GOAL: reach the tower | PLAN: walk north; climb";

#[test]
fn initialize_commits_v0() {
    let (_dir, story, state) = minimal_story(MockFixture::default());
    assert_eq!(state.chapter_index, 0);
    assert_eq!(state.world_version, VersionTag::ROOT);
    assert_eq!(story.store.head(WORLD_KEY).unwrap(), VersionTag::ROOT);
    for id in ["ann", "ben"] {
        assert_eq!(story.store.head(&format!("char/{id}")).unwrap(), VersionTag::ROOT);
        assert_eq!(story.store.get(&format!("char/{id}"), None).unwrap().body_json().unwrap(), json!({"hp": 3}));
    }
}

#[test]
fn initialize_errors() {
    let dir = tempfile::tempdir().unwrap();
    minimal_project(dir.path());
    std::fs::remove_file(dir.path().join("outline.json")).unwrap();
    assert!(matches!(Project::load(dir.path()), Err(CreagentiveError::MissingFile(f)) if f == "outline.json"));

    let dir = tempfile::tempdir().unwrap();
    minimal_project(dir.path());
    let mut outline: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("outline.json")).unwrap()).unwrap();
    outline["ending_condition"] = json!(["m1", "nope"]);
    write(dir.path(), "outline.json", &outline);
    match Project::load(dir.path()) {
        Err(CreagentiveError::SchemaError { file, violations }) => {
            assert_eq!(file, "outline.json");
            assert!(violations[0].contains("nope"));
        }
        other => panic!("expected SchemaError, got {other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    minimal_project(dir.path());
    write(dir.path(), "characters/dup.json", &json!({"character_id": "ann", "name": "Other"}));
    assert!(matches!(Project::load(dir.path()), Err(CreagentiveError::SchemaError { .. })));
}

#[test]
fn long_term_goals_follow_outline() {
    let project = Project::load(stories().join("tower")).unwrap();
    let goals = derive_long_term_goals(&project.outline);
    let ids: Vec<&str> = goals.iter().map(|g| g.milestone_id.as_str()).collect();
    assert_eq!(ids, ["find-map", "open-gate", "reach-tower"]);
    let mut empty = project.outline.clone();
    empty.milestones.clear();
    assert!(derive_long_term_goals(&empty).is_empty());
}

fn slot() -> GoalSlot {
    GoalSlot {
        chapter_index: 1,
        candidate: 0,
        seed: 0,
    }
}

#[test]
fn short_term_goal_from_scripted_trace() {
    let mut f = MockFixture::default();
    f.insert("goal:ann:*", MockEntry::text(GOOD_GOAL));
    let (_dir, story, _) = minimal_story(f);
    let ann = story.project.character("ann").unwrap().clone();
    let ltg = derive_long_term_goals(&story.project.outline);
    let (ctx, log) = ExecutionContext::collecting("n");
    let (goal, plan) = generate_short_term_goal(&story, &ann, &story.project.environment, &[], &ltg, slot(), &ctx).unwrap();
    assert_eq!(goal.goal_text, "reach the tower");
    assert_eq!(goal.derived_from, ["m1"]);
    assert_eq!(plan.steps.len(), 2);
    assert_eq!(plan.steps[0].step_text, "walk north");
    assert!(log.read().unwrap().is_empty());
}

#[test]
fn garbage_twice_fails_goal() {
    let mut f = MockFixture::default();
    f.insert("goal:ann:*", MockEntry::text("no steps, no answer"));
    let (_dir, story, _) = minimal_story(f);
    let ann = story.project.character("ann").unwrap().clone();
    let (ctx, log) = ExecutionContext::collecting("n");
    let err = generate_short_term_goal(&story, &ann, &story.project.environment, &[], &[], slot(), &ctx).unwrap_err();
    assert!(matches!(err, CreagentiveError::GoalGenerationFailed(c) if c == "ann"));
    assert_eq!(kinds(&log), [EventKind::Violation, EventKind::Retried, EventKind::Violation]);
    assert_eq!(story.backend.calls(), 2);
}

/// Records every prompt and answers from a mock fixture.
struct Capture {
    prompts: Mutex<Vec<String>>,
    inner: MockProvider,
}

impl ModelProvider for Capture {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion, ResourceError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        self.inner.complete(prompt, params)
    }
}

#[test]
fn goal_prompt_holds_last_ten_memories() {
    let mut f = MockFixture::default();
    f.insert("*", MockEntry::text(GOOD_GOAL));
    let capture = Arc::new(Capture {
        prompts: Mutex::new(Vec::new()),
        inner: MockProvider::new(f),
    });
    let backend = ResourceHandle::from_model(
        ResourceDescriptor::new("cap", ResourceKind::Model, "capture://"),
        Arc::clone(&capture) as Arc<dyn ModelProvider>,
    );
    let dir = tempfile::tempdir().unwrap();
    minimal_project(dir.path());
    let (story, state) = story_with(Project::load(dir.path()).unwrap(), backend, StorySettings::default());
    for i in 0..15 {
        story.memory.append("ann", MemoryKind::Observation, format!("memory-{i:02}"), VersionTag::ROOT);
    }
    let ann = story.project.character("ann").unwrap().clone();
    let memories = story.memory.recent("ann", story.settings.memory_window);
    let (ctx, _) = ExecutionContext::collecting("n");
    generate_short_term_goal(&story, &ann, &story.project.environment, &memories, &[], slot(), &ctx).unwrap();
    let prompts = capture.prompts.lock().unwrap();
    let present: Vec<usize> = (0..15).filter(|i| prompts[0].contains(&format!("memory-{i:02}"))).collect();
    assert_eq!(present, (5..15).collect::<Vec<_>>());
    drop(prompts);
    // The candidate path reads the same window from the store.
    capture.prompts.lock().unwrap().clear();
    generate_candidates(&story, &state, 1, 0, &ctx).unwrap();
    let prompts = capture.prompts.lock().unwrap();
    let ann_prompt = prompts.iter().find(|p| p.starts_with("goal:ann:")).unwrap();
    assert_eq!((0..15).filter(|i| ann_prompt.contains(&format!("memory-{i:02}"))).count(), 10);
    assert!(!ann_prompt.contains("memory-04"));
}

fn atoms_project(dir: &Path, n_predicates: usize) {
    minimal_project(dir);
    let manifest: Vec<Value> = (0..n_predicates)
        .map(|i| json!({"predicate_id": format!("p{i}"), "atom_id": format!("a{i}"), "question_template": "Chapter {chapter}, {candidate}: {env}"}))
        .collect();
    write(dir, "predicates.json", &Value::Array(manifest));
}

#[test]
fn candidates_share_origin_and_atoms_match_counts() {
    // Scripted yes/no counts per atom; the oracle is (yes - no) / (yes + no).
    let scripts: [&[&str]; 5] = [
        &["Yes", "Yes", "Yes", "Yes", "Yes"],
        &["Yes", "Yes", "Yes", "No", "Yes"],
        &["No", "Yes", "No", "Yes", "No"],
        &["No", "No", "No", "No", "No"],
        &["Yes", "maybe", "No", "Yes", "Yes"],
    ];
    let mut f = MockFixture::default();
    f.insert("goal:*", MockEntry::text(GOOD_GOAL));
    for (i, s) in scripts.iter().enumerate() {
        f.insert(format!("ask:a{i}:*"), MockEntry::samples(s.iter().copied()));
    }
    let dir = tempfile::tempdir().unwrap();
    atoms_project(dir.path(), 5);
    let (story, state) = story_with(Project::load(dir.path()).unwrap(), handle(f), StorySettings::default());
    let (ctx, _) = ExecutionContext::collecting("gen-candidates");
    let ts = generate_candidates(&story, &state, 3, 40, &ctx).unwrap();
    assert_eq!(ts.len(), 3);
    let ids: BTreeSet<&str> = ts.iter().map(|t| t.trajectory_id.as_str()).collect();
    assert_eq!(ids.len(), 3);
    assert!(ts.iter().all(|t| t.base_env_version == state.world_version));
    let oracle: Vec<f64> = scripts
        .iter()
        .map(|s| {
            let yes = s.iter().filter(|a| **a == "Yes").count() as f64;
            let no = s.iter().filter(|a| **a == "No").count() as f64;
            (yes - no) / (yes + no)
        })
        .collect();
    for t in &ts {
        for (got, want) in t.atom_values.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn single_candidate_is_selected_regardless_of_atoms() {
    let mut f = MockFixture::default();
    f.insert("goal:*", MockEntry::text(GOOD_GOAL));
    f.insert("ask:*", MockEntry::samples(["No"]));
    let dir = tempfile::tempdir().unwrap();
    atoms_project(dir.path(), 2);
    let (story, state) = story_with(Project::load(dir.path()).unwrap(), handle(f), StorySettings::default());
    let (ctx, _) = ExecutionContext::collecting("gen-candidates");
    let ts = generate_candidates(&story, &state, 1, 0, &ctx).unwrap();
    assert_eq!(ts[0].atom_values, [-1.0, -1.0]);
    let sel = select_trajectory(&story.project.decision_model, &[ts[0].atom_values.clone()], ACCEPT_LABEL).unwrap();
    assert_eq!(sel.winner, 0);
}

#[test]
fn all_candidates_failing_is_no_viable_candidates() {
    let mut f = MockFixture::default();
    f.insert("goal:*", MockEntry::text("nonsense"));
    let (_dir, story, state) = minimal_story(f);
    let (ctx, log) = ExecutionContext::collecting("gen-candidates");
    let err = generate_candidates(&story, &state, 2, 0, &ctx).unwrap_err();
    assert!(matches!(err, CreagentiveError::NoViableCandidates { chapter: 1, .. }));
    assert!(err.is_retriable());
    // Each round of a candidate ends in a failed goal; every round but the last is retried.
    let retried = log.read().unwrap().iter().filter(|e| e.kind == EventKind::Retried && e.payload["tag"].starts_with("ch1-t")).count();
    assert_eq!(retried, 2 * (story.settings.candidate_rounds as usize - 1));
}

fn one_trajectory(story: &Story, state: &StoryState) -> Trajectory {
    let (ctx, _) = ExecutionContext::collecting("gen-candidates");
    generate_candidates(story, state, 1, 0, &ctx).unwrap().remove(0)
}

fn chapter_json(text: &str, names: &[&str]) -> String {
    json!({"chapter_text": text, "characters": names}).to_string()
}

#[test]
fn writer_accepts_valid_chapter() {
    let mut f = MockFixture::default();
    f.insert("goal:*", MockEntry::text(GOOD_GOAL));
    f.insert("write:*", MockEntry::text(chapter_json("Ann and Ben walked north.", &["Ann", "Ben"])));
    let (_dir, story, state) = minimal_story(f);
    let t = one_trajectory(&story, &state);
    let (ctx, log) = ExecutionContext::collecting("write");
    let ch = write_chapter(&story, &t, 1, 0, &ctx).unwrap();
    assert_eq!(ch.word_count, 5);
    assert_eq!(ch.env_version_after, VersionTag(1));
    assert!(log.read().unwrap().is_empty());
}

#[test]
fn writer_retries_unknown_characters() {
    let bad = chapter_json("Ann met Zed.", &["Ann", "Zed"]);
    let good = chapter_json("Ann met Ben.", &["Ann", "Ben"]);
    let mut f = MockFixture::default();
    f.insert("goal:*", MockEntry::text(GOOD_GOAL));
    // seed % 3 picks the sample: attempts use seeds 3, 4, 5.
    f.insert("write:*", MockEntry::samples([good.as_str(), bad.as_str(), bad.as_str()]));
    let (_dir, story, state) = minimal_story(f);
    let t = one_trajectory(&story, &state);
    let calls = story.backend.calls();
    let (ctx, log) = ExecutionContext::collecting("write");
    let ch = write_chapter(&story, &t, 1, 4, &ctx).unwrap();
    assert_eq!(ch.text, "Ann met Ben.");
    assert_eq!(story.backend.calls() - calls, 3);
    let events = log.read().unwrap();
    let violations: Vec<&NodeEvent> = events.iter().filter(|e| e.kind == EventKind::Violation).collect();
    assert_eq!(violations.len(), 2);
    assert!(violations.iter().all(|e| e.payload["code"] == "unknown_character"));
    assert_eq!(
        events.iter().map(|e| e.kind).collect::<Vec<_>>(),
        [EventKind::Violation, EventKind::Retried, EventKind::Violation, EventKind::Retried]
    );
}

#[test]
fn writer_gives_up_after_two_retries() {
    let mut f = MockFixture::default();
    f.insert("goal:*", MockEntry::text(GOOD_GOAL));
    f.insert("write:*", MockEntry::text(chapter_json("", &["Ann"])));
    let (_dir, story, state) = minimal_story(f);
    let t = one_trajectory(&story, &state);
    let calls = story.backend.calls();
    let (ctx, log) = ExecutionContext::collecting("write");
    let err = write_chapter(&story, &t, 1, 0, &ctx).unwrap_err();
    assert!(matches!(&err, CreagentiveError::ChapterRejected { chapter: 1, violations } if violations[0].starts_with("empty")));
    assert_eq!(story.backend.calls() - calls, 3);
    assert_eq!(kinds(&log).iter().filter(|k| **k == EventKind::Violation).count(), 3);
}

fn goal_fixture() -> MockFixture {
    let mut f = MockFixture::default();
    f.insert(
        "goal:*",
        MockEntry::text("1. act\nANSWER: GOAL: open the door | PLAN: push @door.open=true; rest @ann.hp=4"),
    );
    f.insert("write:*", MockEntry::text(chapter_json("Ann pushed the door.", &["Ann"])));
    f
}

fn advance(story: &Story, state: &StoryState) -> (StoryState, Trajectory) {
    let t = one_trajectory(story, state);
    let k = state.chapter_index + 1;
    let (ctx, _) = ExecutionContext::collecting("write");
    let ch = write_chapter(story, &t, k, 0, &ctx).unwrap();
    (commit_state(story, state, &ch, &t).unwrap(), t)
}

#[test]
fn commit_advances_world_and_memory() {
    let (_dir, story, state) = minimal_story(goal_fixture());
    let (next, t) = advance(&story, &state);
    assert_eq!(next.chapter_index, 1);
    assert_eq!(story.store.head(WORLD_KEY).unwrap(), VersionTag(1));
    assert_eq!(story.store.get(WORLD_KEY, None).unwrap().body_json().unwrap(), t.projected_env);
    assert_eq!(story.store.get("char/ann", None).unwrap().body_json().unwrap(), json!({"hp": 4}));
    for id in ["ann", "ben"] {
        let tail = story.memory.recent(id, 1).remove(0);
        assert_eq!(tail.kind, MemoryKind::Outcome);
        assert_eq!(tail.chapter_version, VersionTag(1));
    }
}

#[test]
fn ten_commits_replay_exactly() {
    let (_dir, story, mut state) = minimal_story(goal_fixture());
    let mut snapshots = vec![story.store.get(WORLD_KEY, None).unwrap().body.clone()];
    for _ in 0..10 {
        state = advance(&story, &state).0;
        snapshots.push(story.store.get(WORLD_KEY, None).unwrap().body.clone());
    }
    let tags: Vec<u64> = story.store.history(WORLD_KEY).unwrap().iter().map(|e| e.version.0).collect();
    assert_eq!(tags, (0..=10).collect::<Vec<_>>());
    for (v, snap) in snapshots.iter().enumerate() {
        assert_eq!(&story.store.get(WORLD_KEY, Some(VersionTag(v as u64))).unwrap().body, snap);
    }
}

#[test]
fn commit_rejects_stale_base() {
    let (_dir, story, state) = minimal_story(goal_fixture());
    let t = one_trajectory(&story, &state);
    let (ctx, _) = ExecutionContext::collecting("write");
    let ch = write_chapter(&story, &t, 1, 0, &ctx).unwrap();
    commit_state(&story, &state, &ch, &t).unwrap();
    let err = commit_state(&story, &state, &ch, &t).unwrap_err();
    assert_eq!(err.class(), "stale_parent");
    assert!(!err.is_retriable());
}

fn ending_project(dir: &Path) {
    minimal_project(dir);
    write(
        dir,
        "outline.json",
        &json!({
            "title": "Ending",
            "milestones": [
                {"milestone_id": "door", "description": "d", "completion_predicate": {"type": "field_equals", "pointer": "/entities/door/open", "value": true}},
                {"milestone_id": "late", "description": "l", "completion_predicate": {"type": "chapter_at_least", "n": 2}},
                {"milestone_id": "judge", "description": "j", "completion_predicate": {"type": "llm", "question": "Is it over?"}}
            ],
            "ending_condition": ["door", "late", "judge"]
        }),
    );
}

fn ending_story(judge: &[&str]) -> (tempfile::TempDir, Story, StoryState) {
    let dir = tempfile::tempdir().unwrap();
    ending_project(dir.path());
    let mut f = goal_fixture();
    f.insert("end:judge:*", MockEntry::samples(judge.iter().copied()));
    let settings = StorySettings {
        yes_no_samples: judge.len() as u32,
        ..StorySettings::default()
    };
    let (story, state) = story_with(Project::load(dir.path()).unwrap(), handle(f), settings);
    (dir, story, state)
}

#[test]
fn ending_check_cases() {
    let (_dir, story, state) = ending_story(&["Yes", "Yes", "No"]);
    let (s1, _) = advance(&story, &state);
    let check = check_ending(&story, &s1, 0).unwrap();
    assert!(!check.done);
    assert_eq!(check.satisfied_milestones, BTreeSet::from(["door".to_string(), "judge".to_string()]));
    let s1 = StoryState {
        satisfied: check.satisfied_milestones,
        ..s1
    };
    let (s2, _) = advance(&story, &s1);
    let check = check_ending(&story, &s2, 0).unwrap();
    assert!(check.done);
    assert_eq!(check.satisfied_milestones.len(), 3);
}

#[test]
fn balanced_votes_do_not_satisfy() {
    let (_dir, story, state) = ending_story(&["Yes", "No", "Yes", "No"]);
    let check = check_ending(&story, &state, 0).unwrap();
    assert!(!check.satisfied_milestones.contains("judge"));
}

#[test]
fn satisfied_milestones_are_sticky() {
    let (_dir, story, mut state) = ending_story(&["No"]);
    state.satisfied.insert("judge".into());
    // The world still has the door closed; the recorded milestone stays.
    let check = check_ending(&story, &state, 0).unwrap();
    assert!(check.satisfied_milestones.contains("judge"));
    assert!(!check.satisfied_milestones.contains("door"));
}

#[test]
fn empty_outline_ends_at_first_check() {
    let (_dir, mut story, state) = minimal_story(goal_fixture());
    story.project.outline.milestones.clear();
    story.project.outline.ending_condition.clear();
    assert!(check_ending(&story, &state, 0).unwrap().done);
}

fn tower_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::new(stories().join("tower"), out);
    c.seed = 11;
    c
}

fn transitions(events: &[hawk_core::engine::ExecutionEvent]) -> Vec<(String, EventKind)> {
    events
        .iter()
        .filter(|e| {
            matches!(
                e.kind,
                EventKind::Scheduled | EventKind::Started | EventKind::Succeeded | EventKind::Failed | EventKind::Cancelled
            )
        })
        .map(|e| (e.node_id.clone(), e.kind))
        .collect()
}

#[test]
fn scripted_story_runs_three_chapters() {
    let out = tempfile::tempdir().unwrap();
    let r = run(&tower_config(out.path())).unwrap();
    assert_eq!(r.chapters.len(), 3);
    assert!(!r.truncated);
    assert_eq!(r.final_env_version, VersionTag(3));
    let refs: Vec<&str> = r.chapters.iter().map(|c| c.trajectory_ref.as_str()).collect();
    assert_eq!(refs, ["ch1-t1", "ch2-t0", "ch3-t2"]);
    for (j, c) in r.chapters.iter().enumerate() {
        assert_eq!(c.chapter_index, j + 1);
        assert_eq!(c.env_version_after, VersionTag(j as u64 + 1));
        assert!(out.path().join(format!("chapters/ch{}.md", j + 1)).exists());
    }
    let novel = std::fs::read_to_string(out.path().join("novel.md")).unwrap();
    assert!(novel.starts_with("# The Tower in the Valley\n"));
    let log = std::fs::read_to_string(out.path().join("run.events.ndjson")).unwrap();
    let events = hawk_core::engine::events_from_ndjson(&log).unwrap();
    assert_eq!(events, r.events);
    assert!(events.iter().enumerate().all(|(i, e)| e.seq == i as u64));
    assert!(events.iter().all(|e| e.kind != EventKind::Failed));
}

#[test]
fn chapter_cap_truncates() {
    let out = tempfile::tempdir().unwrap();
    let mut c = tower_config(out.path());
    c.max_chapters = 2;
    let r = run(&c).unwrap();
    assert_eq!(r.chapters.len(), 2);
    assert!(r.truncated);
}

#[test]
fn fixed_seed_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&tower_config(a.path())).unwrap();
    let rb = run(&tower_config(b.path())).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "novel.md"), read(b.path(), "novel.md"));
    for k in 1..=3 {
        let f = format!("chapters/ch{k}.md");
        assert_eq!(read(a.path(), &f), read(b.path(), &f));
    }
    assert_eq!(transitions(&ra.events), transitions(&rb.events));
    assert_eq!(ra.world_snapshots, rb.world_snapshots);
}

#[test]
fn losers_never_reach_the_committed_world() {
    let out = tempfile::tempdir().unwrap();
    let mut c = tower_config(out.path());
    c.n_candidates = 5;
    c.keep_losers = true;
    let r = run(&c).unwrap();
    let committed: BTreeSet<&String> = r.world_snapshots.iter().collect();
    let mut losers = 0;
    for entry in std::fs::read_dir(out.path().join("losers")).unwrap() {
        let t: Trajectory = serde_json::from_str(&std::fs::read_to_string(entry.unwrap().path()).unwrap()).unwrap();
        assert!(!committed.contains(&t.projected_env.to_string()), "{} leaked", t.trajectory_id);
        losers += 1;
    }
    assert_eq!(losers, 4 * r.chapters.len());
    // Only winners' goals reach memory.
    let memory = MemoryStore::load(&out.path().join("memory.json")).unwrap();
    let goals: Vec<String> = memory
        .query("alice", &hawk_core::operators::MemoryFilter::kind(MemoryKind::Goal))
        .into_iter()
        .map(|r| r.body)
        .collect();
    assert_eq!(goals, ["find the map of the valley", "open the river gate", "climb the tower"]);
}

#[test]
fn concurrent_candidates_match_sequential() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut conc = tower_config(a.path());
    conc.n_candidates = 5;
    let mut seq = conc.clone();
    seq.out_dir = b.path().into();
    seq.settings.concurrent_candidates = false;
    let ra = run(&conc).unwrap();
    let rb = run(&seq).unwrap();
    let refs = |r: &hawk_core::creagentive::NovelResult| r.chapters.iter().map(|c: &Chapter| c.trajectory_ref.clone()).collect::<Vec<_>>();
    assert_eq!(refs(&ra), refs(&rb));
    assert_eq!(ra.world_snapshots, rb.world_snapshots);
}

#[test]
fn unknown_backend_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let mut c = tower_config(out.path());
    c.backend = "nope".into();
    assert!(matches!(run(&c), Err(CreagentiveError::InvalidConfig(_))));
}

#[test]
fn character_profile_roundtrip() {
    let p: CharacterProfile = serde_json::from_value(json!({"character_id": "x", "name": "X"})).unwrap();
    assert!(p.traits.is_empty());
    assert!(serde_json::from_value::<CharacterProfile>(json!({"character_id": "x", "name": "X", "age": 3})).is_err());
}
