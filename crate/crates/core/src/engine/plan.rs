use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::workflow::{topological_order, validate_workflow, WorkflowSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub stages: Vec<Vec<String>>,
    pub order_index: BTreeMap<String, usize>,
}

/// Minimal-depth stage decomposition: roots at stage 0, every other node one
/// past its deepest dependency. Ids within a stage are sorted.
pub fn plan(spec: &WorkflowSpec) -> Result<PlannerOutput, EngineError> {
    let report = validate_workflow(spec);
    if let Some(cycle) = report.cycles().first() {
        return Err(EngineError::CyclicSpec(cycle.to_vec()));
    }
    if !report.is_valid() {
        return Err(EngineError::InvalidSpec(report));
    }
    let order = topological_order(spec).ok_or_else(|| EngineError::CyclicSpec(Vec::new()))?;
    let mut order_index: BTreeMap<String, usize> = BTreeMap::new();
    for id in order {
        let node = spec.node(&id).expect("ordered id exists");
        let stage = node
            .depends_on
            .iter()
            .map(|d| order_index[d] + 1)
            .max()
            .unwrap_or(0);
        order_index.insert(id, stage);
    }
    let depth = order_index.values().max().map_or(0, |m| m + 1);
    let mut stages = vec![Vec::new(); depth];
    // BTreeMap iteration keeps each stage sorted
    for (id, &stage) in &order_index {
        stages[stage].push(id.clone());
    }
    Ok(PlannerOutput { stages, order_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{OperatorKind, TaskNode};

    fn node(id: &str, deps: &[&str]) -> TaskNode {
        TaskNode::new(id, OperatorKind::Memory).depends_on(deps.iter().copied())
    }

    #[test]
    fn chain_and_diamond() {
        let chain = WorkflowSpec::new("c", vec![node("C", &["B"]), node("A", &[]), node("B", &["A"])]);
        assert_eq!(plan(&chain).unwrap().stages, vec![vec!["A"], vec!["B"], vec!["C"]]);
        let diamond = WorkflowSpec::new(
            "d",
            vec![node("A", &[]), node("C", &["A"]), node("B", &["A"]), node("D", &["B", "C"])],
        );
        let p = plan(&diamond).unwrap();
        assert_eq!(p.stages, vec![vec!["A"], vec!["B", "C"], vec!["D"]]);
        assert_eq!(p.order_index["D"], 2);
    }

    #[test]
    fn cyclic_is_rejected() {
        let spec = WorkflowSpec::new("x", vec![node("A", &["B"]), node("B", &["A"])]);
        assert!(matches!(plan(&spec), Err(EngineError::CyclicSpec(c)) if c == vec!["A", "B"]));
        assert!(plan(&WorkflowSpec::new("e", vec![])).unwrap().stages.is_empty());
    }
}
