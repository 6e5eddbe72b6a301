//! Analytic DNF gradients against central finite differences.

mod common;

use common::{central_difference, max_relative_error, random_grad_case as random_case, GRAD_TOLERANCE as TOLERANCE};

use hawk_core::dnf::{DnfModel, TrainingExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn twenty_random_models_match_finite_differences() {
    for seed in 0..20 {
        let (model, example) = random_case(seed);
        let err = max_relative_error(&model, &example);
        assert!(err < TOLERANCE, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn four_atom_three_clause_two_label_case() {
    let mut model = DnfModel::init(4, 3, 2, 42);
    // move away from the near-vacuous initialization
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for w in model.conj_weights.iter_mut().chain(model.disj_weights.iter_mut()) {
        *w += rng.gen_range(-2.0..2.0);
    }
    let example = TrainingExample::new(vec![0.9, -0.3, 0.1, -1.0], 1);
    let err = max_relative_error(&model, &example);
    assert!(err < TOLERANCE, "max relative error {err:e}");
}

#[test]
fn saturated_gate_has_vanishing_gradient() {
    let mut model = DnfModel::init(3, 2, 2, 1);
    model.set_conj_raw(0, 1, 30.0);
    model.set_disj_raw(1, 1, 30.0);
    let example = TrainingExample::new(vec![0.2, -0.6, 0.4], 0);
    let grad = model.backward(&example.atoms, example.label).unwrap();
    // conj gate (clause 0, literal 1) and disj gate (label 1, clause 1)
    let conj_idx = 1;
    let disj_idx = model.n_clauses + 1;
    assert!(grad.conj[conj_idx].abs() < 1e-10, "{:e}", grad.conj[conj_idx]);
    assert!(grad.disj[disj_idx].abs() < 1e-10, "{:e}", grad.disj[disj_idx]);
    // the oracle agrees that the slope is flat there
    let numeric = central_difference(&model, &example);
    assert!(numeric[conj_idx].abs() < 1e-10);
    assert!(numeric[model.conj_weights.len() + disj_idx].abs() < 1e-10);
}
