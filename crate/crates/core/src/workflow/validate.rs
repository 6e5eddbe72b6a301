use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use super::WorkflowSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DuplicateNodeId { node_id: String },
    DanglingDependency { node_id: String, missing: String },
    /// Nodes along the cycle, following `depends_on` edges, starting from the
    /// smallest id.
    Cycle { nodes: Vec<String> },
    InvalidConcurrencyCap { value: usize },
    InvalidRetryPolicy { node_id: String, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNodeId { node_id } => write!(f, "duplicate node id `{node_id}`"),
            Violation::DanglingDependency { node_id, missing } => {
                write!(f, "`{node_id}` depends on unknown node `{missing}`")
            }
            Violation::Cycle { nodes } => write!(f, "cycle [{}]", nodes.join(", ")),
            Violation::InvalidConcurrencyCap { value } => {
                write!(f, "concurrency_cap must be >= 1, got {value}")
            }
            Violation::InvalidRetryPolicy { node_id, reason } => {
                write!(f, "retry policy of `{node_id}`: {reason}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn cycles(&self) -> Vec<&[String]> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::Cycle { nodes } => Some(nodes.as_slice()),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Lists every structural problem with `spec`. An empty report means the
/// spec is a well-formed DAG.
pub fn validate_workflow(spec: &WorkflowSpec) -> ValidationReport {
    let mut violations = Vec::new();
    if spec.concurrency_cap == 0 {
        violations.push(Violation::InvalidConcurrencyCap { value: 0 });
    }

    let mut graph: DiGraph<&str, ()> = DiGraph::new();
    let mut index: HashMap<&str, NodeIndex> = HashMap::new();
    let mut reported_dupes = BTreeSet::new();
    for node in &spec.nodes {
        if index.contains_key(node.node_id.as_str()) {
            if reported_dupes.insert(node.node_id.as_str()) {
                violations.push(Violation::DuplicateNodeId {
                    node_id: node.node_id.clone(),
                });
            }
            continue;
        }
        index.insert(&node.node_id, graph.add_node(&node.node_id));
        let rp = &node.retry_policy;
        if rp.max_attempts == 0 {
            violations.push(Violation::InvalidRetryPolicy {
                node_id: node.node_id.clone(),
                reason: "max_attempts must be >= 1".into(),
            });
        }
        if rp.backoff_factor.is_nan() || rp.backoff_factor < 1.0 {
            violations.push(Violation::InvalidRetryPolicy {
                node_id: node.node_id.clone(),
                reason: format!("backoff_factor must be >= 1, got {}", rp.backoff_factor),
            });
        }
    }

    // Edge node -> dependency, so cycles read in depends_on order.
    let mut seen_nodes = BTreeSet::new();
    for node in &spec.nodes {
        if !seen_nodes.insert(node.node_id.as_str()) {
            continue;
        }
        let from = index[node.node_id.as_str()];
        for dep in &node.depends_on {
            match index.get(dep.as_str()) {
                Some(&to) => {
                    graph.update_edge(from, to, ());
                }
                None => violations.push(Violation::DanglingDependency {
                    node_id: node.node_id.clone(),
                    missing: dep.clone(),
                }),
            }
        }
    }

    let mut cycles: Vec<Vec<String>> = tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1 || graph.contains_edge(scc[0], scc[0]))
        .map(|scc| cycle_in_component(&graph, &scc))
        .collect();
    cycles.sort();
    violations.extend(cycles.into_iter().map(|nodes| Violation::Cycle { nodes }));
    ValidationReport { violations }
}

/// Finds one concrete cycle through the smallest node of a strongly
/// connected component.
fn cycle_in_component(graph: &DiGraph<&str, ()>, scc: &[NodeIndex]) -> Vec<String> {
    let members: BTreeSet<NodeIndex> = scc.iter().copied().collect();
    let start = *scc.iter().min_by_key(|ix| graph[**ix]).expect("non-empty scc");
    // BFS from start back to start inside the component, smallest ids first.
    let mut parent: BTreeMap<NodeIndex, NodeIndex> = BTreeMap::new();
    let mut queue = std::collections::VecDeque::from([start]);
    let mut visited = BTreeSet::from([start]);
    let mut last = start;
    'search: while let Some(cur) = queue.pop_front() {
        let mut next: Vec<NodeIndex> = graph
            .neighbors(cur)
            .filter(|n| members.contains(n))
            .collect();
        next.sort_by_key(|n| graph[*n]);
        for n in next {
            if n == start {
                last = cur;
                break 'search;
            }
            if visited.insert(n) {
                parent.insert(n, cur);
                queue.push_back(n);
            }
        }
    }
    let mut path = vec![last];
    while let Some(&p) = parent.get(path.last().unwrap()) {
        path.push(p);
    }
    path.reverse();
    path.into_iter().map(|ix| graph[ix].to_string()).collect()
}

/// A dependency-respecting order (parents first), or `None` if the graph
/// has a cycle or dangling edges. Ties resolve by node id.
pub fn topological_order(spec: &WorkflowSpec) -> Option<Vec<String>> {
    let ids: BTreeSet<&str> = spec.nodes.iter().map(|n| n.node_id.as_str()).collect();
    if ids.len() != spec.nodes.len() {
        return None;
    }
    let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|id| (*id, 0)).collect();
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for node in &spec.nodes {
        for dep in &node.depends_on {
            if !ids.contains(dep.as_str()) {
                return None;
            }
            *indegree.get_mut(node.node_id.as_str()).unwrap() += 1;
            children.entry(dep.as_str()).or_default().push(&node.node_id);
        }
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::with_capacity(ids.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_string());
        for child in children.get(id).into_iter().flatten() {
            let d = indegree.get_mut(child).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(child);
            }
        }
    }
    (order.len() == ids.len()).then_some(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{OperatorKind, TaskNode};

    fn node(id: &str, deps: &[&str]) -> TaskNode {
        TaskNode::new(id, OperatorKind::Reasoning).depends_on(deps.iter().copied())
    }

    #[test]
    fn chain_is_valid() {
        let spec = WorkflowSpec::new("c", vec![node("A", &[]), node("B", &["A"]), node("C", &["B"])]);
        assert!(validate_workflow(&spec).is_valid());
        assert_eq!(topological_order(&spec).unwrap(), vec!["A", "B", "C"]);
    }

    #[test]
    fn two_cycle_reported_once() {
        let spec = WorkflowSpec::new("c", vec![node("A", &["B"]), node("B", &["A"])]);
        let report = validate_workflow(&spec);
        assert_eq!(
            report.violations,
            vec![Violation::Cycle {
                nodes: vec!["A".into(), "B".into()]
            }]
        );
        assert!(topological_order(&spec).is_none());
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let spec = WorkflowSpec::new("c", vec![node("A", &["A"])]);
        assert_eq!(validate_workflow(&spec).cycles(), vec![&["A".to_string()][..]]);
    }

    #[test]
    fn duplicates_and_dangling() {
        let spec = WorkflowSpec::new(
            "c",
            vec![node("A", &[]), node("A", &[]), node("B", &["Z"])],
        );
        let report = validate_workflow(&spec);
        assert!(report.violations.contains(&Violation::DuplicateNodeId { node_id: "A".into() }));
        assert!(report.violations.contains(&Violation::DanglingDependency {
            node_id: "B".into(),
            missing: "Z".into()
        }));
        assert_eq!(report.violations.len(), 2);
    }

    #[test]
    fn longer_cycle_path_is_concrete() {
        let spec = WorkflowSpec::new(
            "c",
            vec![node("d", &["b"]), node("b", &["c"]), node("c", &["d"]), node("a", &[])],
        );
        let cycles = validate_workflow(&spec).cycles().iter().map(|c| c.to_vec()).collect::<Vec<_>>();
        assert_eq!(cycles, vec![vec!["b", "c", "d"]]);
    }

    #[test]
    fn bad_policy_and_cap() {
        let mut spec = WorkflowSpec::new("c", vec![node("A", &[]).with_retry(crate::workflow::RetryPolicy::new(0, 1, 0.5))]);
        spec.concurrency_cap = 0;
        assert_eq!(validate_workflow(&spec).violations.len(), 3);
    }
}
