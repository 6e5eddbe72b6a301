//! Hard readout of a trained model into a discrete DNF.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::DnfModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub atom: usize,
    pub negated: bool,
}

impl Literal {
    pub fn pos(atom: usize) -> Self {
        Self { atom, negated: false }
    }

    pub fn neg(atom: usize) -> Self {
        Self { atom, negated: true }
    }

    pub fn eval(&self, assignment: &[bool]) -> bool {
        assignment[self.atom] != self.negated
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "!x{}", self.atom)
        } else {
            write!(f, "x{}", self.atom)
        }
    }
}

/// A conjunction of literals; the empty clause is `true`.
pub type Clause = Vec<Literal>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRule {
    pub label: usize,
    pub clauses: Vec<Clause>,
}

impl LabelRule {
    pub fn eval(&self, assignment: &[bool]) -> bool {
        self.clauses
            .iter()
            .any(|clause| clause.iter().all(|lit| lit.eval(assignment)))
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "y{} <- ", self.label)?;
        let parts: Vec<String> = self
            .clauses
            .iter()
            .map(|c| {
                if c.is_empty() {
                    "true".to_string()
                } else {
                    let lits: Vec<String> = c.iter().map(|l| l.to_string()).collect();
                    format!("({})", lits.join(" & "))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" | "))
    }
}

/// Thresholds every gate; labels with no surviving clause are omitted.
///
/// A clause that contains both polarities of an atom can never fire and is
/// dropped.
pub fn extract_rules(model: &DnfModel, gate_threshold: f64) -> Vec<LabelRule> {
    let a = model.n_atoms;
    let mut rules = Vec::new();
    for y in 0..model.n_labels {
        let mut clauses: Vec<Clause> = Vec::new();
        for c in 0..model.n_clauses {
            if model.disj_gate(y, c) <= gate_threshold {
                continue;
            }
            let clause: Clause = (0..2 * a)
                .filter(|&l| model.conj_gate(c, l) > gate_threshold)
                .map(|l| if l < a { Literal::pos(l) } else { Literal::neg(l - a) })
                .collect();
            let contradictory = clause
                .iter()
                .any(|l| !l.negated && clause.contains(&Literal::neg(l.atom)));
            if !contradictory && !clauses.contains(&clause) {
                clauses.push(clause);
            }
        }
        if !clauses.is_empty() {
            rules.push(LabelRule { label: y, clauses });
        }
    }
    rules
}
