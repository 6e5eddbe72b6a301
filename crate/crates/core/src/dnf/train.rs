use serde::{Deserialize, Serialize};

use super::model::{DnfModel, Gradient};
use super::DnfError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub atoms: Vec<f64>,
    pub label: usize,
}

impl TrainingExample {
    pub fn new(atoms: Vec<f64>, label: usize) -> Self {
        Self { atoms, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_clauses: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of an L1 penalty on gate values, pushing unused gates to zero.
    #[serde(default)]
    pub l1_gate_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_clauses: 4,
            lr: 0.05,
            epochs: 2000,
            seed: 7,
            l1_gate_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DnfModel,
    /// Objective at the start of every epoch, before that epoch's update.
    pub losses: Vec<f64>,
}

/// Number of labels implied by a dataset (largest label + 1).
pub fn infer_labels(dataset: &[TrainingExample]) -> usize {
    dataset.iter().map(|e| e.label + 1).max().unwrap_or(0)
}

/// Summed cross-entropy over the dataset plus the gate penalty.
pub fn objective(model: &DnfModel, dataset: &[TrainingExample], l1: f64) -> Result<f64, DnfError> {
    let mut total = 0.0;
    for ex in dataset {
        total += model.example_loss(&ex.atoms, ex.label)?;
    }
    Ok(total + l1 * gate_sum(model))
}

fn gate_sum(model: &DnfModel) -> f64 {
    use super::model::sigmoid;
    model
        .conj_weights
        .iter()
        .chain(&model.disj_weights)
        .map(|w| sigmoid(*w))
        .sum()
}

/// Gradient of [`objective`].
pub fn batch_gradient(
    model: &DnfModel,
    dataset: &[TrainingExample],
    l1: f64,
) -> Result<Gradient, DnfError> {
    use super::model::sigmoid;
    let mut grad = Gradient::zeros(model);
    for ex in dataset {
        let g = model.backward(&ex.atoms, ex.label)?;
        grad.add_scaled(&g, 1.0);
    }
    if l1 != 0.0 {
        for (g, w) in grad.conj.iter_mut().zip(&model.conj_weights) {
            let s = sigmoid(*w);
            *g += l1 * s * (1.0 - s);
        }
        for (g, w) in grad.disj.iter_mut().zip(&model.disj_weights) {
            let s = sigmoid(*w);
            *g += l1 * s * (1.0 - s);
        }
    }
    Ok(grad)
}

/// Full-batch gradient descent from a seeded initialization.
pub fn train(
    dataset: &[TrainingExample],
    n_labels: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome, DnfError> {
    let first = dataset.first().ok_or(DnfError::EmptyDataset)?;
    let n_atoms = first.atoms.len();
    let n_labels = n_labels.max(infer_labels(dataset));
    for ex in dataset {
        if ex.atoms.len() != n_atoms {
            return Err(DnfError::DimensionMismatch {
                expected: n_atoms,
                got: ex.atoms.len(),
            });
        }
    }
    let mut model = DnfModel::init(n_atoms, config.n_clauses, n_labels, config.seed);
    model.check()?;
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        losses.push(objective(&model, dataset, config.l1_gate_penalty)?);
        let grad = batch_gradient(&model, dataset, config.l1_gate_penalty)?;
        model.step(&grad, config.lr);
    }
    Ok(TrainOutcome { model, losses })
}

/// Fraction of examples whose argmax label matches.
pub fn accuracy(model: &DnfModel, dataset: &[TrainingExample]) -> Result<f64, DnfError> {
    if dataset.is_empty() {
        return Err(DnfError::EmptyDataset);
    }
    let inputs: Vec<&[f64]> = dataset.iter().map(|ex| ex.atoms.as_slice()).collect();
    let hits = model
        .forward_batch(&inputs)?
        .iter()
        .zip(dataset)
        .filter(|(scores, ex)| scores.argmax() == ex.label)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Mean cross-entropy, without any penalty term.
pub fn mean_loss(model: &DnfModel, dataset: &[TrainingExample]) -> Result<f64, DnfError> {
    if dataset.is_empty() {
        return Err(DnfError::EmptyDataset);
    }
    Ok(objective(model, dataset, 0.0)? / dataset.len() as f64)
}
