//! Differentiable DNF decision layer.
//!
//! Atom truth values in `[-1, 1]` come from yes/no model evidence
//! ([`truth_from_logits`], [`truth_from_samples`]). A [`DnfModel`] maps them
//! to the unit interval, forms gated product conjunctions over positive and
//! negated literals, combines clauses per label with a probabilistic sum and
//! normalizes `alpha * s` with a softmax. Saturated gates reproduce classical
//! DNF evaluation exactly, which is what [`extract_rules`] reads back out.

mod manifest;
mod model;
mod rules;
mod select;
mod train;
mod truth;

use thiserror::Error;

pub use manifest::{PredicateBinding, PredicateManifest};
pub use model::{argmax, loss, softmax, DnfModel, Gradient, LabelScores, DEFAULT_ALPHA, SCHEMA_VERSION};
pub use rules::{extract_rules, Clause, LabelRule, Literal};
pub use select::{select_trajectory, Selection, ACCEPT_LABEL};
pub use train::{
    accuracy, batch_gradient, infer_labels, mean_loss, objective, train, TrainConfig, TrainOutcome,
    TrainingExample,
};
pub use truth::{truth_from_logits, truth_from_samples, AtomTruth};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DnfError {
    #[error("non-finite logit")]
    NonFiniteInput,
    #[error("no yes/no samples")]
    NoSamples,
    #[error("expected {expected} atoms, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("atom value {0} outside [-1, 1]")]
    AtomOutOfRange(f64),
    #[error("label {label} out of range for {n_labels} labels")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}
