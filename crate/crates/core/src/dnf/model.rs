//! Soft DNF layer: gated product conjunctions, probabilistic-sum
//! disjunctions and a temperature-scaled softmax over labels.
//!
//! Literals are indexed `0..2A`: literal `k < A` is the positive atom `x_k`,
//! literal `A + k` its negation `1 - x_k`, with `x_k = (mu_k + 1) / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DnfError;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 5.0;
const INIT_LOW: f64 = -2.2;
const INIT_HIGH: f64 = -1.8;
const ALPHA_FLOOR: f64 = 1e-3;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Learnable DNF model. Gates are `sigmoid(raw)` of the stored weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnfModel {
    pub n_atoms: usize,
    pub n_clauses: usize,
    pub n_labels: usize,
    pub alpha: f64,
    /// `n_clauses x 2*n_atoms`, row-major.
    pub conj_weights: Vec<f64>,
    /// `n_labels x n_clauses`, row-major.
    pub disj_weights: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub schema_version: u32,
}

/// Scores produced by [`DnfModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScores {
    /// Clause activations, one per clause.
    pub conj: Vec<f64>,
    /// Disjunction scores in `[0, 1]`, one per label.
    pub s: Vec<f64>,
    /// Softmax of `alpha * s`.
    pub z: Vec<f64>,
}

impl LabelScores {
    pub fn argmax(&self) -> usize {
        argmax(&self.z)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Gradient of the loss with respect to every raw parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub conj: Vec<f64>,
    pub disj: Vec<f64>,
    pub alpha: f64,
}

impl Gradient {
    pub fn zeros(model: &DnfModel) -> Self {
        Self {
            conj: vec![0.0; model.conj_weights.len()],
            disj: vec![0.0; model.disj_weights.len()],
            alpha: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self.conj.iter().chain(&self.disj).map(|g| g * g).sum();
        (sq + self.alpha * self.alpha).sqrt()
    }

    pub(crate) fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.conj.iter_mut().zip(&other.conj) {
            *a += scale * b;
        }
        for (a, b) in self.disj.iter_mut().zip(&other.disj) {
            *a += scale * b;
        }
        self.alpha += scale * other.alpha;
    }

    /// Flattened as `[conj..., disj..., alpha]`, matching [`DnfModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.conj.len() + self.disj.len() + 1);
        v.extend_from_slice(&self.conj);
        v.extend_from_slice(&self.disj);
        v.push(self.alpha);
        v
    }
}

impl DnfModel {
    /// Model with every raw weight set to `raw` and the default temperature.
    pub fn filled(n_atoms: usize, n_clauses: usize, n_labels: usize, raw: f64) -> Self {
        Self {
            n_atoms,
            n_clauses,
            n_labels,
            alpha: DEFAULT_ALPHA,
            conj_weights: vec![raw; n_clauses * 2 * n_atoms],
            disj_weights: vec![raw; n_labels * n_clauses],
            seed: None,
            schema_version: SCHEMA_VERSION,
        }
    }

    /// Seeded initialization with raw weights uniform in `[-2.2, -1.8]`.
    pub fn init(n_atoms: usize, n_clauses: usize, n_labels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::filled(n_atoms, n_clauses, n_labels, 0.0);
        for w in model
            .conj_weights
            .iter_mut()
            .chain(model.disj_weights.iter_mut())
        {
            *w = rng.gen_range(INIT_LOW..=INIT_HIGH);
        }
        model.seed = Some(seed);
        model
    }

    pub fn n_literals(&self) -> usize {
        2 * self.n_atoms
    }

    pub fn conj_raw(&self, clause: usize, literal: usize) -> f64 {
        self.conj_weights[clause * self.n_literals() + literal]
    }

    pub fn set_conj_raw(&mut self, clause: usize, literal: usize, raw: f64) {
        let l = self.n_literals();
        self.conj_weights[clause * l + literal] = raw;
    }

    pub fn disj_raw(&self, label: usize, clause: usize) -> f64 {
        self.disj_weights[label * self.n_clauses + clause]
    }

    pub fn set_disj_raw(&mut self, label: usize, clause: usize, raw: f64) {
        self.disj_weights[label * self.n_clauses + clause] = raw;
    }

    pub fn conj_gate(&self, clause: usize, literal: usize) -> f64 {
        sigmoid(self.conj_raw(clause, literal))
    }

    pub fn disj_gate(&self, label: usize, clause: usize) -> f64 {
        sigmoid(self.disj_raw(label, clause))
    }

    pub fn check(&self) -> Result<(), DnfError> {
        if self.n_labels == 0 || self.n_clauses == 0 {
            return Err(DnfError::InvalidModel("model needs at least one label and one clause".into()));
        }
        if self.conj_weights.len() != self.n_clauses * self.n_literals()
            || self.disj_weights.len() != self.n_labels * self.n_clauses
        {
            return Err(DnfError::InvalidModel("weight shapes do not match dimensions".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(DnfError::InvalidModel(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    /// All raw parameters, flattened as `[conj..., disj..., alpha]`.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.conj_weights.len() + self.disj_weights.len() + 1);
        v.extend_from_slice(&self.conj_weights);
        v.extend_from_slice(&self.disj_weights);
        v.push(self.alpha);
        v
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let nc = self.conj_weights.len();
        let nd = self.disj_weights.len();
        assert_eq!(params.len(), nc + nd + 1, "parameter vector length");
        self.conj_weights.copy_from_slice(&params[..nc]);
        self.disj_weights.copy_from_slice(&params[nc..nc + nd]);
        self.alpha = params[nc + nd];
    }

    fn literals(&self, atoms: &[f64]) -> Result<Vec<f64>, DnfError> {
        if atoms.len() != self.n_atoms {
            return Err(DnfError::DimensionMismatch {
                expected: self.n_atoms,
                got: atoms.len(),
            });
        }
        let mut lits = Vec::with_capacity(self.n_literals());
        for &mu in atoms {
            if !(-1.0..=1.0).contains(&mu) {
                return Err(DnfError::AtomOutOfRange(mu));
            }
            lits.push((mu + 1.0) / 2.0);
        }
        for k in 0..self.n_atoms {
            lits.push(1.0 - lits[k]);
        }
        Ok(lits)
    }

    fn gates(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.conj_weights.iter().map(|w| sigmoid(*w)).collect(),
            self.disj_weights.iter().map(|w| sigmoid(*w)).collect(),
        )
    }

    fn forward_gated(&self, conj_g: &[f64], disj_g: &[f64], atoms: &[f64]) -> Result<LabelScores, DnfError> {
        let lits = self.literals(atoms)?;
        let nl = self.n_literals();
        let conj: Vec<f64> = conj_g
            .chunks_exact(nl)
            .map(|row| {
                row.iter()
                    .zip(&lits)
                    .map(|(g, lit)| 1.0 - g * (1.0 - lit))
                    .product()
            })
            .collect();
        let s: Vec<f64> = disj_g
            .chunks_exact(self.n_clauses)
            .map(|row| {
                let keep: f64 = row.iter().zip(&conj).map(|(h, c)| 1.0 - h * c).product();
                1.0 - keep
            })
            .collect();
        let z = softmax(&s.iter().map(|v| self.alpha * v).collect::<Vec<_>>());
        Ok(LabelScores { conj, s, z })
    }

    pub fn forward(&self, atoms: &[f64]) -> Result<LabelScores, DnfError> {
        let (conj_g, disj_g) = self.gates();
        self.forward_gated(&conj_g, &disj_g, atoms)
    }

    /// [`forward`](Self::forward) over many inputs, computing the gates once.
    pub fn forward_batch<A: AsRef<[f64]>>(&self, inputs: &[A]) -> Result<Vec<LabelScores>, DnfError> {
        let (conj_g, disj_g) = self.gates();
        inputs
            .iter()
            .map(|atoms| self.forward_gated(&conj_g, &disj_g, atoms.as_ref()))
            .collect()
    }

    /// Cross-entropy of a single example, `-ln z[label]`.
    pub fn example_loss(&self, atoms: &[f64], label: usize) -> Result<f64, DnfError> {
        let scores = self.forward(atoms)?;
        loss(&scores, label)
    }

    /// Exact gradient of `-ln z[label]` with respect to the raw parameters.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&self, atoms: &[f64], label: usize) -> Result<Gradient, DnfError> {
        if label >= self.n_labels {
            return Err(DnfError::LabelOutOfRange {
                label,
                n_labels: self.n_labels,
            });
        }
        let lits = self.literals(atoms)?;
        let scores = self.forward(atoms)?;
        let nl = self.n_literals();
        let nc = self.n_clauses;
        let mut grad = Gradient::zeros(self);

        // d loss / d (alpha * s_y) = z_y - [y == label]
        let dlogit: Vec<f64> = scores
            .z
            .iter()
            .enumerate()
            .map(|(y, z)| z - if y == label { 1.0 } else { 0.0 })
            .collect();
        grad.alpha = dlogit.iter().zip(&scores.s).map(|(d, s)| d * s).sum();
        let ds: Vec<f64> = dlogit.iter().map(|d| self.alpha * d).collect();

        // s_y = 1 - prod_c q_yc with q_yc = 1 - h_yc * conj_c
        let mut dconj = vec![0.0; nc];
        for y in 0..self.n_labels {
            let q: Vec<f64> = (0..nc)
                .map(|c| 1.0 - self.disj_gate(y, c) * scores.conj[c])
                .collect();
            let others = products_excluding(&q);
            for c in 0..nc {
                let h = self.disj_gate(y, c);
                // ds_y/dq_yc = -others; dq/dh = -conj; dq/dconj = -h
                let ds_dh = others[c] * scores.conj[c];
                grad.disj[y * nc + c] = ds[y] * ds_dh * h * (1.0 - h);
                dconj[c] += ds[y] * others[c] * h;
            }
        }

        // conj_c = prod_l t_cl with t_cl = 1 - g_cl * (1 - lit_l)
        for c in 0..nc {
            let t: Vec<f64> = (0..nl)
                .map(|l| 1.0 - self.conj_gate(c, l) * (1.0 - lits[l]))
                .collect();
            let others = products_excluding(&t);
            for l in 0..nl {
                let g = self.conj_gate(c, l);
                let dconj_dg = -(1.0 - lits[l]) * others[l];
                grad.conj[c * nl + l] = dconj[c] * dconj_dg * g * (1.0 - g);
            }
        }
        Ok(grad)
    }

    /// Applies one descent step and keeps the temperature positive.
    pub(crate) fn step(&mut self, grad: &Gradient, lr: f64) {
        for (w, g) in self.conj_weights.iter_mut().zip(&grad.conj) {
            *w -= lr * g;
        }
        for (w, g) in self.disj_weights.iter_mut().zip(&grad.disj) {
            *w -= lr * g;
        }
        self.alpha = (self.alpha - lr * grad.alpha).max(ALPHA_FLOOR);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DnfError> {
        let model: Self =
            serde_json::from_str(text).map_err(|e| DnfError::InvalidModel(e.to_string()))?;
        if model.schema_version != SCHEMA_VERSION {
            return Err(DnfError::InvalidModel(format!(
                "unsupported schema_version {}",
                model.schema_version
            )));
        }
        model.check()?;
        Ok(model)
    }
}

/// `out[i] = prod_{j != i} v[j]`, without dividing.
fn products_excluding(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![1.0; n];
    let mut acc = 1.0;
    for i in 0..n {
        out[i] = acc;
        acc *= v[i];
    }
    acc = 1.0;
    for i in (0..n).rev() {
        out[i] *= acc;
        acc *= v[i];
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln z[label]`.
pub fn loss(scores: &LabelScores, label: usize) -> Result<f64, DnfError> {
    let z = scores.z.get(label).ok_or(DnfError::LabelOutOfRange {
        label,
        n_labels: scores.z.len(),
    })?;
    Ok(-z.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ON: f64 = 40.0;
    const OFF: f64 = -40.0;

    fn identity_clause_model() -> DnfModel {
        // one atom, one clause gated on x_0, one label
        let mut m = DnfModel::filled(1, 1, 1, OFF);
        m.set_conj_raw(0, 0, ON);
        m.set_disj_raw(0, 0, ON);
        m
    }

    #[test]
    fn identity_clause_passes_atom_through() {
        let m = identity_clause_model();
        assert_eq!(m.forward(&[1.0]).unwrap().s, vec![1.0]);
        assert_eq!(m.forward(&[-1.0]).unwrap().s, vec![0.0]);
        let half = m.forward(&[0.0]).unwrap().s[0];
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vacuous_model_is_uniform() {
        let m = DnfModel::filled(3, 2, 4, OFF);
        let scores = m.forward(&[0.3, -0.7, 1.0]).unwrap();
        for c in &scores.conj {
            assert_eq!(*c, 1.0);
        }
        for s in &scores.s {
            assert_eq!(*s, 0.0);
        }
        for z in &scores.z {
            assert!((z - 0.25).abs() < 1e-15);
        }
        assert!((loss(&scores, 2).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_values() {
        let skewed = LabelScores {
            conj: vec![],
            s: vec![],
            z: vec![0.25, 0.75],
        };
        assert!((loss(&skewed, 0).unwrap() - 1.3862943611198906).abs() < 1e-12);
        let peaked = LabelScores {
            conj: vec![],
            s: vec![],
            z: vec![1.0 - 1e-12, 1e-12],
        };
        assert!(loss(&peaked, 0).unwrap() < 1e-11);
        assert!(loss(&peaked, 5).is_err());
    }

    #[test]
    fn dimension_errors() {
        let m = DnfModel::filled(2, 1, 2, 0.0);
        assert_eq!(
            m.forward(&[0.0]),
            Err(DnfError::DimensionMismatch { expected: 2, got: 1 })
        );
        assert!(matches!(m.forward(&[0.0, 1.5]), Err(DnfError::AtomOutOfRange(_))));
        assert!(m.backward(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn one_hot_minimum_has_tiny_gradient() {
        let mut m = identity_clause_model();
        m.n_labels = 2;
        m.disj_weights = vec![ON, OFF];
        m.alpha = 1000.0;
        let grad = m.backward(&[1.0], 0).unwrap();
        assert!(grad.norm() < 1e-8, "norm {}", grad.norm());
    }

    #[test]
    fn products_excluding_handles_zeros() {
        assert_eq!(products_excluding(&[2.0, 0.0, 3.0]), vec![0.0, 6.0, 0.0]);
        assert_eq!(products_excluding(&[5.0]), vec![1.0]);
    }

    #[test]
    fn json_round_trip() {
        let m = DnfModel::init(3, 2, 2, 11);
        let back = DnfModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.clone();
        bad.conj_weights.pop();
        assert!(DnfModel::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn init_range() {
        let m = DnfModel::init(4, 3, 2, 7);
        for w in m.conj_weights.iter().chain(&m.disj_weights) {
            assert!((-2.2..=-1.8).contains(w));
        }
        assert_eq!(m.alpha, 5.0);
        assert_eq!(m, DnfModel::init(4, 3, 2, 7));
    }
}
