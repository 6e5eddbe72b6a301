use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::project::{CharacterProfile, Milestone, Outline};
use super::{CreagentiveError, Story, StoryState};
use crate::engine::{payload, EventKind, ExecutionContext, SCOPE, SCOPE_OPERATION};
use crate::operators::{reason, MemoryRecord, OperatorError, ReasoningInput, VersionTag};
use crate::resources::GenerationParams;

/// Seed offset between successive regenerations of one candidate or goal.
const RETRY_STRIDE: u64 = 7919;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTermGoal {
    pub milestone_id: String,
    pub description: String,
}

pub fn derive_long_term_goals(outline: &Outline) -> Vec<LongTermGoal> {
    outline
        .milestones
        .iter()
        .map(|m| LongTermGoal {
            milestone_id: m.milestone_id.clone(),
            description: m.description.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermGoal {
    pub character_id: String,
    pub chapter_index: usize,
    pub goal_text: String,
    pub derived_from: Vec<String>,
    pub reasoning_trace_ref: String,
}

/// A write `entity.field = value` carried by a plan step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityWrite {
    pub entity: String,
    pub field: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step_text: String,
    pub affected_entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub writes: Vec<EntityWrite>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub character_id: String,
    pub steps: Vec<PlanStep>,
    pub goal_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub base_env_version: VersionTag,
    pub goals: Vec<ShortTermGoal>,
    pub plans: Vec<ActionPlan>,
    pub projected_env: Value,
    pub atom_values: Vec<f64>,
}

impl Trajectory {
    pub fn participants(&self) -> impl Iterator<Item = &str> {
        self.plans.iter().map(|p| p.character_id.as_str())
    }
}

/// Identifies one goal request inside a chapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalSlot {
    pub chapter_index: usize,
    pub candidate: usize,
    pub seed: u64,
}

/// Parses a plan step, pulling out `@entity.field=value` tokens. The value is
/// read as JSON when it parses and kept as a string otherwise.
pub fn parse_step(raw: &str) -> Option<PlanStep> {
    let mut words = Vec::new();
    let mut writes = Vec::new();
    for token in raw.split_whitespace() {
        let parsed = token.strip_prefix('@').and_then(|t| {
            let (target, value) = t.split_once('=')?;
            let (entity, field) = target.split_once('.')?;
            if entity.is_empty() || field.is_empty() {
                return None;
            }
            let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            Some(EntityWrite {
                entity: entity.to_string(),
                field: field.to_string(),
                value,
            })
        });
        match parsed {
            Some(w) => writes.push(w),
            None => words.push(token),
        }
    }
    if words.is_empty() {
        return None;
    }
    let mut affected_entities: Vec<String> = writes.iter().map(|w| w.entity.clone()).collect();
    affected_entities.dedup();
    Some(PlanStep {
        step_text: words.join(" "),
        affected_entities,
        writes,
    })
}

/// Parses `GOAL: <text> | PLAN: <step>; <step>`.
pub fn parse_goal_answer(answer: &str) -> Option<(String, Vec<PlanStep>)> {
    let rest = answer.trim().strip_prefix("GOAL:")?;
    let (goal, plan) = rest.split_once('|')?;
    let plan = plan.trim().strip_prefix("PLAN:")?;
    let goal = goal.trim();
    if goal.is_empty() {
        return None;
    }
    let steps: Vec<PlanStep> = plan
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(parse_step)
        .collect::<Option<_>>()?;
    if steps.is_empty() {
        return None;
    }
    Some((goal.to_string(), steps))
}

fn memory_line(r: &MemoryRecord) -> String {
    let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    format!("[{kind} #{}] {}", r.seq, r.body)
}

/// The goal prompt. Its first line is the tag `goal:<character>:ch<k>:t<j>`.
pub fn goal_prompt(
    character: &CharacterProfile,
    env_doc: &Value,
    memories: &[MemoryRecord],
    unmet: &[LongTermGoal],
    slot: GoalSlot,
) -> String {
    let mut p = format!(
        "goal:{}:ch{}:t{}\nYou are {} ({}). Plan your part of chapter {}.\nEnvironment:\n{}\nRecent memories:",
        character.character_id,
        slot.chapter_index,
        slot.candidate,
        character.name,
        character.traits.join(", "),
        slot.chapter_index,
        env_doc
    );
    if memories.is_empty() {
        p.push_str("\n(none)");
    }
    for r in memories {
        p.push_str("\n- ");
        p.push_str(&memory_line(r));
    }
    p.push_str("\nOpen milestones:");
    for g in unmet {
        p.push_str(&format!("\n- {}: {}", g.milestone_id, g.description));
    }
    p.push_str("\nState the goal and plan as: GOAL: <goal> | PLAN: <step>; <step>");
    p
}

/// Asks the backend for one character's short-term goal and plan. Each
/// attempt is a chain-of-thought call; a trace without an answer line or an
/// answer outside the goal grammar counts as a violation and is retried with
/// a new seed until `settings.goal_attempts` is spent.
#[allow(clippy::too_many_arguments)]
pub fn generate_short_term_goal(
    story: &Story,
    character: &CharacterProfile,
    env_doc: &Value,
    memories: &[MemoryRecord],
    long_term_goals: &[LongTermGoal],
    slot: GoalSlot,
    ctx: &ExecutionContext,
) -> Result<(ShortTermGoal, ActionPlan), CreagentiveError> {
    let question = goal_prompt(character, env_doc, memories, long_term_goals, slot);
    let tag = question.lines().next().unwrap_or_default().to_string();
    let input = ReasoningInput::cot(question);
    let attempts = story.settings.goal_attempts.max(1);
    let derived_from: Vec<String> = if long_term_goals.is_empty() {
        vec![super::OPEN_ENDING.to_string()]
    } else {
        long_term_goals.iter().map(|g| g.milestone_id.clone()).collect()
    };
    for attempt in 0..attempts {
        let seed = slot.seed.wrapping_add(RETRY_STRIDE.wrapping_mul(u64::from(attempt)));
        let code = match reason(&story.backend, &input, &GenerationParams::seeded(seed), ctx, 0) {
            Ok(trace) => match parse_goal_answer(&trace.answer) {
                Some((goal_text, steps)) => {
                    let goal_ref = format!("{tag}#{seed}");
                    let goal = ShortTermGoal {
                        character_id: character.character_id.clone(),
                        chapter_index: slot.chapter_index,
                        goal_text,
                        derived_from,
                        reasoning_trace_ref: goal_ref.clone(),
                    };
                    let plan = ActionPlan {
                        character_id: character.character_id.clone(),
                        steps,
                        goal_ref,
                    };
                    return Ok((goal, plan));
                }
                None => {
                    ctx.emit(
                        EventKind::Violation,
                        payload([
                            ("attempt", (attempt + 1).to_string()),
                            ("code", "goal_grammar".to_string()),
                            ("tag", tag.clone()),
                        ]),
                    );
                    "goal_grammar"
                }
            },
            Err(OperatorError::UnparseableTrace(_)) => "unparseable_trace",
            Err(e) => return Err(e.into()),
        };
        if attempt + 1 < attempts {
            ctx.emit(
                EventKind::Retried,
                payload([
                    ("attempt", (attempt + 1).to_string()),
                    ("error", code.to_string()),
                    ("tag", tag.clone()),
                    (SCOPE, SCOPE_OPERATION.to_string()),
                ]),
            );
        }
    }
    Err(CreagentiveError::GoalGenerationFailed(character.character_id.clone()))
}

/// Applies plans to the base environment. Every step appends an entry to the
/// `effects` list; writes set `entities[entity][field]`, later plans winning.
pub fn project_env(base: &Value, chapter_index: usize, plans: &[ActionPlan]) -> Value {
    let mut env = base.clone();
    let obj = env.as_object_mut().expect("environment is an object");
    if !obj.get("effects").is_some_and(Value::is_array) {
        obj.insert("effects".into(), Value::Array(Vec::new()));
    }
    if !obj.get("entities").is_some_and(Value::is_object) {
        obj.insert("entities".into(), Value::Object(Map::new()));
    }
    for plan in plans {
        for step in &plan.steps {
            let mut effect = serde_json::json!({
                "chapter": chapter_index,
                "character": plan.character_id,
                "step": step.step_text,
            });
            if !step.writes.is_empty() {
                effect["writes"] = serde_json::to_value(&step.writes).expect("writes serialize");
            }
            obj["effects"].as_array_mut().expect("effects array").push(effect);
            for w in &step.writes {
                let entities = obj["entities"].as_object_mut().expect("entities object");
                let slot = entities.entry(w.entity.clone()).or_insert_with(|| Value::Object(Map::new()));
                if !slot.is_object() {
                    *slot = Value::Object(Map::new());
                }
                slot[w.field.as_str()] = w.value.clone();
            }
        }
    }
    env
}

/// Characters planning this chapter. A milestone without a participant list
/// involves everyone; otherwise the cast is the union of the lists.
pub fn participants<'a>(story: &'a Story, open: &[&Milestone]) -> Vec<&'a CharacterProfile> {
    let everyone = open.is_empty() || open.iter().any(|m| m.participants.is_none());
    story
        .project
        .characters
        .iter()
        .filter(|c| everyone || open.iter().flat_map(|m| m.participants.iter().flatten()).any(|p| p == &c.character_id))
        .collect()
}

/// Open milestones in outline order.
pub fn unmet_milestones<'a>(outline: &'a Outline, state: &StoryState) -> Vec<&'a Milestone> {
    outline
        .milestones
        .iter()
        .filter(|m| !state.satisfied.contains(&m.milestone_id))
        .collect()
}

fn fill_template(template: &str, env: &Value, chapter: usize, candidate: &str) -> String {
    template
        .replace("{env}", &env.to_string())
        .replace("{chapter}", &chapter.to_string())
        .replace("{candidate}", candidate)
}

/// Truth value of every bound atom against a projected environment, in
/// manifest order. Each question goes out with the tag
/// `ask:<atom_id>:ch<k>:t<j>`.
pub fn evaluate_atoms(
    story: &Story,
    projected_env: &Value,
    chapter_index: usize,
    candidate: usize,
    seed: u64,
) -> Result<Vec<f64>, CreagentiveError> {
    let trajectory_id = trajectory_id(chapter_index, candidate);
    let params = GenerationParams::seeded(seed).with_samples(story.settings.yes_no_samples);
    story
        .project
        .predicates
        .iter()
        .map(|b| {
            let question = format!(
                "ask:{}:ch{chapter_index}:t{candidate}\n{}",
                b.atom_id,
                fill_template(&b.question_template, projected_env, chapter_index, &trajectory_id)
            );
            let evidence = story.backend.ask_yes_no(&question, &params)?;
            Ok(evidence.truth()?)
        })
        .collect()
}

pub fn trajectory_id(chapter_index: usize, candidate: usize) -> String {
    format!("ch{chapter_index}-t{candidate}")
}

/// Builds candidate `j`, regenerating it with fresh seeds while a
/// character's goal generation fails, up to `settings.candidate_rounds`.
fn build_candidate(
    story: &Story,
    state: &StoryState,
    env_doc: &Value,
    memories: &BTreeMap<String, Vec<MemoryRecord>>,
    j: usize,
    seed: u64,
    ctx: &ExecutionContext,
) -> Result<Trajectory, CreagentiveError> {
    let k = state.chapter_index + 1;
    let open = unmet_milestones(&story.project.outline, state);
    let goals_ltg: Vec<LongTermGoal> = open
        .iter()
        .map(|m| LongTermGoal {
            milestone_id: m.milestone_id.clone(),
            description: m.description.clone(),
        })
        .collect();
    let cast = participants(story, &open);
    let rounds = story.settings.candidate_rounds.max(1);
    let id = trajectory_id(k, j);
    let mut last = None;
    for round in 0..rounds {
        let cand_seed = seed.wrapping_add(RETRY_STRIDE.wrapping_mul(u64::from(round)).wrapping_mul(1000));
        let attempt: Result<Vec<(ShortTermGoal, ActionPlan)>, CreagentiveError> = cast
            .iter()
            .map(|c| {
                let mem = memories.get(&c.character_id).map(Vec::as_slice).unwrap_or_default();
                let slot = GoalSlot {
                    chapter_index: k,
                    candidate: j,
                    seed: cand_seed,
                };
                generate_short_term_goal(story, c, env_doc, mem, &goals_ltg, slot, ctx)
            })
            .collect();
        match attempt {
            Ok(pairs) => {
                let (goals, plans): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                let projected_env = project_env(env_doc, k, &plans);
                let atom_values = evaluate_atoms(story, &projected_env, k, j, cand_seed)?;
                return Ok(Trajectory {
                    trajectory_id: id,
                    base_env_version: state.world_version,
                    goals,
                    plans,
                    projected_env,
                    atom_values,
                });
            }
            Err(e @ CreagentiveError::GoalGenerationFailed(_)) => {
                if round + 1 < rounds {
                    ctx.emit(
                        EventKind::Retried,
                        payload([
                            ("attempt", (round + 1).to_string()),
                            ("error", e.class().to_string()),
                            ("tag", id.clone()),
                            (SCOPE, SCOPE_OPERATION.to_string()),
                        ]),
                    );
                }
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one round"))
}

/// Generates `n_candidates` trajectories from the committed world head,
/// candidate `j` seeded with `seed + j`. Candidates whose goal generation
/// keeps failing are dropped; if none survive the call fails.
pub fn generate_candidates(
    story: &Story,
    state: &StoryState,
    n_candidates: usize,
    seed: u64,
    ctx: &ExecutionContext,
) -> Result<Vec<Trajectory>, CreagentiveError> {
    if n_candidates == 0 {
        return Err(CreagentiveError::InvalidConfig("n_candidates must be at least 1".into()));
    }
    let base = story.store.get(super::WORLD_KEY, Some(state.world_version))?;
    let env_doc = base.body_json()?;
    let memories: BTreeMap<String, Vec<MemoryRecord>> = story
        .project
        .characters
        .iter()
        .map(|c| (c.character_id.clone(), story.memory.recent(&c.character_id, story.settings.memory_window)))
        .collect();
    let build = |j: usize| build_candidate(story, state, &env_doc, &memories, j, seed.wrapping_add(j as u64), ctx);
    let results: Vec<Result<Trajectory, CreagentiveError>> = if story.settings.concurrent_candidates && n_candidates > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n_candidates).map(|j| s.spawn(move || build(j))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CreagentiveError::Internal("candidate thread panicked".into()))))
                .collect()
        })
    } else {
        (0..n_candidates).map(build).collect()
    };
    let mut survivors = Vec::new();
    let mut failures = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => survivors.push(t),
            Err(CreagentiveError::GoalGenerationFailed(c)) => failures.push(format!("t{j}: {c}")),
            Err(e) => return Err(e),
        }
    }
    if survivors.is_empty() {
        return Err(CreagentiveError::NoViableCandidates {
            chapter: state.chapter_index + 1,
            failures,
        });
    }
    if let Some(t) = survivors.iter().find(|t| t.base_env_version != state.world_version) {
        return Err(CreagentiveError::Internal(format!(
            "{} starts from {} instead of {}",
            t.trajectory_id, t.base_env_version, state.world_version
        )));
    }
    Ok(survivors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_grammar() {
        let (goal, steps) = parse_goal_answer("GOAL: reach the tower | PLAN: walk north; climb").unwrap();
        assert_eq!(goal, "reach the tower");
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].step_text, "walk north");
        assert_eq!(steps[1].step_text, "climb");
        assert!(parse_goal_answer("reach the tower").is_none());
        assert!(parse_goal_answer("GOAL: x | PLAN: ").is_none());
        assert!(parse_goal_answer("GOAL:  | PLAN: a").is_none());
    }

    #[test]
    fn effect_tokens() {
        let s = parse_step("open the gate @gate.open=true @gate.by=alice").unwrap();
        assert_eq!(s.step_text, "open the gate");
        assert_eq!(s.affected_entities, ["gate"]);
        assert_eq!(s.writes[0].value, Value::Bool(true));
        assert_eq!(s.writes[1].value, Value::String("alice".into()));
        assert!(parse_step("@gate.open=true").is_none());
        // Malformed tokens stay in the text.
        assert_eq!(parse_step("meet @noon").unwrap().step_text, "meet @noon");
    }

    #[test]
    fn later_writes_win() {
        let plan = |c: &str, v: i64| ActionPlan {
            character_id: c.into(),
            steps: vec![parse_step(&format!("set @door.state={v}")).unwrap()],
            goal_ref: String::new(),
        };
        let env = project_env(&serde_json::json!({"setting": "x"}), 1, &[plan("a", 1), plan("b", 2)]);
        assert_eq!(env["entities"]["door"]["state"], 2);
        assert_eq!(env["effects"].as_array().unwrap().len(), 2);
        assert_eq!(env["setting"], "x");
    }
}
