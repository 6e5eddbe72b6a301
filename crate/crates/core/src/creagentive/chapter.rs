use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::plan::Trajectory;
use super::project::{character_key, CompletionPredicate, WORLD_KEY};
use super::{CreagentiveError, Story, StoryState};
use crate::engine::{payload, EventKind, ExecutionContext, SCOPE, SCOPE_OPERATION};
use crate::operators::{
    validate_output, FieldRule, JsonType, MemoryKind, OperatorError, OutputSchema, OutputViolation, SemanticRule,
    VersionTag,
};
use crate::resources::GenerationParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chapter {
    pub chapter_index: usize,
    pub trajectory_ref: String,
    pub text: String,
    pub env_version_after: VersionTag,
    pub word_count: usize,
}

pub fn chapter_schema() -> OutputSchema {
    OutputSchema::new("chapter")
        .field("chapter_text", FieldRule::new(JsonType::String).non_empty())
        .field("characters", FieldRule::new(JsonType::Array))
}

pub fn chapter_rules() -> Vec<SemanticRule> {
    vec![SemanticRule::name_set_membership("unknown_character", "characters", "/characters", "name")]
}

/// Reads the JSON object out of a completion, tolerating prose or code
/// fences around it.
fn extract_object(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str::<Value>(&text[start..=end]).ok().filter(Value::is_object)
}

/// The writer prompt. Its first line is the tag `write:ch<k>`.
pub fn writer_prompt(story: &Story, trajectory: &Trajectory, chapter_index: usize, rejected: &[OutputViolation]) -> String {
    let cast: Vec<String> = story
        .project
        .characters
        .iter()
        .map(|c| format!("{} ({})", c.name, c.traits.join(", ")))
        .collect();
    let mut p = format!(
        "write:ch{chapter_index}\nWrite chapter {chapter_index} of \"{}\".\nCharacters: {}\nWorld after this chapter:\n{}\nPlans:",
        story.project.outline.title,
        cast.join("; "),
        trajectory.projected_env
    );
    for (goal, plan) in trajectory.goals.iter().zip(&trajectory.plans) {
        let name = story.project.character(&plan.character_id).map_or(plan.character_id.as_str(), |c| c.name.as_str());
        let steps: Vec<&str> = plan.steps.iter().map(|s| s.step_text.as_str()).collect();
        p.push_str(&format!("\n- {name}: {} ({})", goal.goal_text, steps.join("; ")));
    }
    p.push_str("\nReply with a JSON object {\"chapter_text\": <text>, \"characters\": [<names appearing>]}.");
    if !rejected.is_empty() {
        p.push_str("\nThe previous draft was rejected:");
        for v in rejected {
            p.push_str(&format!("\n- {}: {}", v.code, v.message));
        }
    }
    p
}

/// Renders the chapter for the selected trajectory. A draft that fails the
/// chapter schema or names an unknown character is retried with the
/// violations appended to the prompt, up to `settings.writer_retries` times.
pub fn write_chapter(
    story: &Story,
    trajectory: &Trajectory,
    chapter_index: usize,
    seed: u64,
    ctx: &ExecutionContext,
) -> Result<Chapter, CreagentiveError> {
    let env = story.project.validation_env();
    let schema = chapter_schema();
    let rules = chapter_rules();
    let retries = story.settings.writer_retries;
    let tag = format!("write:ch{chapter_index}");
    let mut violations = Vec::new();
    for attempt in 0..=retries {
        let prompt = writer_prompt(story, trajectory, chapter_index, &violations);
        let params = GenerationParams::seeded(seed.wrapping_add(u64::from(attempt)));
        let text = story.backend.generate(&prompt, &params)?.first().text.clone();
        violations = match extract_object(&text) {
            Some(doc) => {
                let found = validate_output(&schema, &rules, &doc, &env);
                if found.is_empty() {
                    let body = doc["chapter_text"].as_str().unwrap_or_default().trim().to_string();
                    return Ok(Chapter {
                        chapter_index,
                        trajectory_ref: trajectory.trajectory_id.clone(),
                        word_count: body.split_whitespace().count(),
                        text: body,
                        env_version_after: trajectory.base_env_version.next(),
                    });
                }
                found
            }
            None => vec![OutputViolation::new("malformed_json", None, "reply is not a JSON object")],
        };
        let codes: Vec<&str> = violations.iter().map(|v| v.code.as_str()).collect();
        ctx.emit(
            EventKind::Violation,
            payload([
                ("attempt", (attempt + 1).to_string()),
                ("code", codes.join(",")),
                ("count", violations.len().to_string()),
                ("tag", tag.clone()),
            ]),
        );
        if attempt < retries {
            ctx.emit(
                EventKind::Retried,
                payload([
                    ("attempt", (attempt + 1).to_string()),
                    ("error", codes.join(",")),
                    ("tag", tag.clone()),
                    (SCOPE, SCOPE_OPERATION.to_string()),
                ]),
            );
        }
    }
    Err(CreagentiveError::ChapterRejected {
        chapter: chapter_index,
        violations: violations.iter().map(|v| format!("{}: {}", v.code, v.message)).collect(),
    })
}

/// Commits the trajectory's projected environment as the next `world`
/// version, advances each participant's `char/<id>` document, and appends the
/// winner's goal, plan and outcome records to character memory.
pub fn commit_state(
    story: &Story,
    state: &StoryState,
    chapter: &Chapter,
    trajectory: &Trajectory,
) -> Result<StoryState, CreagentiveError> {
    let k = state.chapter_index + 1;
    if chapter.chapter_index != k {
        return Err(CreagentiveError::Internal(format!(
            "chapter {} committed after chapter {}",
            chapter.chapter_index, state.chapter_index
        )));
    }
    let head = story.store.head(WORLD_KEY)?;
    if trajectory.base_env_version != state.world_version || head != state.world_version {
        return Err(OperatorError::StaleParent {
            key: WORLD_KEY.into(),
            parent: trajectory.base_env_version,
            head,
        }
        .into());
    }
    let body = trajectory.projected_env.to_string();
    let v = story.store.commit(WORLD_KEY, body.as_bytes(), trajectory.base_env_version)?;
    if v != chapter.env_version_after {
        return Err(CreagentiveError::Internal(format!(
            "world advanced to {v}, chapter expected {}",
            chapter.env_version_after
        )));
    }
    let mut next = state.clone();
    next.chapter_index = k;
    next.world_version = v;
    for (goal, plan) in trajectory.goals.iter().zip(&trajectory.plans) {
        let cid = &plan.character_id;
        let prev = next.character_versions.get(cid).copied().unwrap_or(VersionTag::ROOT);
        let mut doc = story.store.get(&character_key(cid), Some(prev))?.body_json()?;
        for w in plan.steps.iter().flat_map(|s| &s.writes).filter(|w| &w.entity == cid) {
            if !doc.is_object() {
                doc = Value::Object(Default::default());
            }
            doc[w.field.as_str()] = w.value.clone();
        }
        let cv = story.store.commit(&character_key(cid), doc.to_string().as_bytes(), prev)?;
        next.character_versions.insert(cid.clone(), cv);
        let steps: Vec<&str> = plan.steps.iter().map(|s| s.step_text.as_str()).collect();
        story.memory.append(cid, MemoryKind::Goal, goal.goal_text.clone(), trajectory.base_env_version);
        story.memory.append(cid, MemoryKind::Plan, steps.join("; "), trajectory.base_env_version);
        story
            .memory
            .append(cid, MemoryKind::Outcome, format!("chapter {k}: {}", goal.goal_text), v);
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndingCheck {
    pub done: bool,
    /// Every milestone satisfied so far, including earlier chapters.
    pub satisfied_milestones: BTreeSet<String>,
}

/// Evaluates every open milestone against the committed world head. Rule
/// predicates read the document; model predicates are yes/no questions tagged
/// `end:<milestone_id>:ch<k>` and hold when the truth value is above zero.
pub fn check_ending(story: &Story, state: &StoryState, seed: u64) -> Result<EndingCheck, CreagentiveError> {
    let env = story.store.get(WORLD_KEY, Some(state.world_version))?.body_json()?;
    let mut satisfied = state.satisfied.clone();
    let params = GenerationParams::seeded(seed).with_samples(story.settings.yes_no_samples);
    for m in &story.project.outline.milestones {
        if satisfied.contains(&m.milestone_id) {
            continue;
        }
        let holds = match &m.completion_predicate {
            CompletionPredicate::FieldEquals { pointer, value } => env.pointer(pointer) == Some(value),
            CompletionPredicate::Exists { pointer } => env.pointer(pointer).is_some_and(|v| !v.is_null()),
            CompletionPredicate::ChapterAtLeast { n } => state.chapter_index >= *n,
            CompletionPredicate::Llm { question } => {
                let q = format!("end:{}:ch{}\n{question}\nWorld:\n{env}", m.milestone_id, state.chapter_index);
                story.backend.ask_yes_no(&q, &params)?.truth()? > 0.0
            }
        };
        if holds {
            satisfied.insert(m.milestone_id.clone());
        }
    }
    let done = story.project.outline.ending_condition.iter().all(|id| satisfied.contains(id));
    Ok(EndingCheck {
        done,
        satisfied_milestones: satisfied,
    })
}
