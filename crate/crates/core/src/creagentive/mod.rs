//! Iterative multi-candidate story generation on top of the engine, the
//! operator layer and the DNF decision layer.
//!
//! A project directory holds the outline, the initial environment and the
//! character profiles. Each chapter is one run of the `novel-generation`
//! workflow: load the world head, collect character memories, generate
//! candidate trajectories, select one, render it, commit it and check the
//! ending.

mod chapter;
mod plan;
mod project;
mod run;

use std::sync::Arc;

use thiserror::Error;

pub use chapter::{chapter_rules, chapter_schema, check_ending, commit_state, write_chapter, writer_prompt, Chapter, EndingCheck};
pub use plan::{
    derive_long_term_goals, evaluate_atoms, generate_candidates, generate_short_term_goal, goal_prompt, parse_goal_answer,
    parse_step, participants, project_env, trajectory_id, unmet_milestones, ActionPlan, EntityWrite, GoalSlot,
    LongTermGoal, PlanStep, ShortTermGoal, Trajectory,
};
pub use project::{
    character_key, default_decision_model, initialize, ArchivedMemory, CharacterProfile, CompletionPredicate, Milestone,
    Outline, Project, StoryState, WORLD_KEY,
};
pub use run::{run, story_registry, CreAgentiveDispatcher, NovelResult, RunConfig, StoryRun};

use crate::dnf::DnfError;
use crate::engine::{DispatchError, EngineError};
use crate::operators::{DocumentStore, MemoryStore, OperatorError};
use crate::registry::RegistryError;
use crate::resources::{ResourceError, ResourceHandle};
use crate::workflow::WorkflowError;

/// Milestone id recorded on goals generated when no milestone is open.
pub const OPEN_ENDING: &str = "open-ending";

#[derive(Debug, Error)]
pub enum CreagentiveError {
    #[error("missing project file `{0}`")]
    MissingFile(String),
    #[error("invalid `{file}`: {}", violations.join("; "))]
    SchemaError { file: String, violations: Vec<String> },
    #[error("io: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("goal generation failed for `{0}`")]
    GoalGenerationFailed(String),
    #[error("no viable candidates for chapter {chapter}: {}", failures.join(", "))]
    NoViableCandidates { chapter: usize, failures: Vec<String> },
    #[error("chapter {chapter} rejected: {}", violations.join("; "))]
    ChapterRejected { chapter: usize, violations: Vec<String> },
    #[error("node `{node_id}` failed: {message}")]
    NodeFailed { node_id: String, message: String },
    #[error(transparent)]
    Store(#[from] OperatorError),
    #[error(transparent)]
    Backend(#[from] ResourceError),
    #[error(transparent)]
    Decision(#[from] DnfError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("internal: {0}")]
    Internal(String),
}

impl CreagentiveError {
    pub fn class(&self) -> &'static str {
        match self {
            CreagentiveError::MissingFile(_) => "missing_file",
            CreagentiveError::SchemaError { .. } => "schema_error",
            CreagentiveError::Io(_) => "io",
            CreagentiveError::InvalidConfig(_) => "invalid_config",
            CreagentiveError::GoalGenerationFailed(_) => "goal_generation_failed",
            CreagentiveError::NoViableCandidates { .. } => "no_viable_candidates",
            CreagentiveError::ChapterRejected { .. } => "chapter_rejected",
            CreagentiveError::NodeFailed { .. } => "node_failed",
            CreagentiveError::Store(e) => e.class(),
            CreagentiveError::Backend(e) => e.class(),
            CreagentiveError::Decision(_) => "decision",
            CreagentiveError::Workflow(_) => "workflow",
            CreagentiveError::Engine(_) => "engine",
            CreagentiveError::Registry(_) => "registry",
            CreagentiveError::Internal(_) => "internal",
        }
    }

    /// Whether a node that failed with this error may be run again.
    pub fn is_retriable(&self) -> bool {
        match self {
            CreagentiveError::GoalGenerationFailed(_)
            | CreagentiveError::NoViableCandidates { .. }
            | CreagentiveError::ChapterRejected { .. } => true,
            CreagentiveError::Backend(e) => e.is_retriable(),
            // Another writer on the world chain is a bug in single-story mode.
            CreagentiveError::Store(OperatorError::StaleParent { .. }) => false,
            CreagentiveError::Store(e) => e.is_retriable(),
            _ => false,
        }
    }
}

impl From<CreagentiveError> for DispatchError {
    fn from(e: CreagentiveError) -> Self {
        DispatchError::new(e.class(), e.to_string(), e.is_retriable())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorySettings {
    /// Memory records per character placed in the goal prompt.
    pub memory_window: usize,
    /// Attempts per goal request before the character's goal fails.
    pub goal_attempts: u32,
    /// Times a candidate is regenerated after a failed goal before it is dropped.
    pub candidate_rounds: u32,
    pub writer_retries: u32,
    /// Samples per yes/no question on backends without logits.
    pub yes_no_samples: u32,
    pub concurrent_candidates: bool,
}

impl Default for StorySettings {
    fn default() -> Self {
        Self {
            memory_window: 10,
            goal_attempts: 2,
            candidate_rounds: 3,
            writer_retries: 2,
            yes_no_samples: 5,
            concurrent_candidates: true,
        }
    }
}

/// A loaded project together with the stores and backend it writes to.
#[derive(Clone)]
pub struct Story {
    pub project: Project,
    pub store: Arc<dyn DocumentStore>,
    pub memory: Arc<MemoryStore>,
    pub backend: ResourceHandle,
    pub settings: StorySettings,
}
