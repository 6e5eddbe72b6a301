use serde::{Deserialize, Serialize};

use super::model::DnfModel;
use super::DnfError;

/// Label index meaning "accept this candidate" in the binary decision setup.
pub const ACCEPT_LABEL: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub winner: usize,
    /// Label distribution for every candidate, in input order.
    pub z: Vec<Vec<f64>>,
}

/// Scores every candidate and picks the one with the highest probability on
/// `accept_label`. Ties go to the lowest index.
pub fn select_trajectory(
    model: &DnfModel,
    candidates: &[Vec<f64>],
    accept_label: usize,
) -> Result<Selection, DnfError> {
    if candidates.is_empty() {
        return Err(DnfError::NoCandidates);
    }
    if accept_label >= model.n_labels {
        return Err(DnfError::LabelOutOfRange {
            label: accept_label,
            n_labels: model.n_labels,
        });
    }
    let z: Vec<Vec<f64>> = model
        .forward_batch(candidates)?
        .into_iter()
        .map(|scores| scores.z)
        .collect();
    let mut winner = 0;
    for (i, dist) in z.iter().enumerate() {
        if dist[accept_label] > z[winner][accept_label] {
            winner = i;
        }
    }
    Ok(Selection { winner, z })
}
