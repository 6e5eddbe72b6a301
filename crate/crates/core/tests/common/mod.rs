#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use hawk_core::dnf::{DnfModel, TrainingExample};
use hawk_core::engine::{EventKind, ExecutionContext, ExecutionEvent};
use hawk_core::registry::{AgentDescriptor, AgentRegistry, AgentSpecification, AgentStatus, FnAgent};
use hawk_core::workflow::{OperatorKind, TaskNode, WorkflowSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;


pub const ON: f64 = 40.0;
pub const OFF: f64 = -40.0;

/// One literal per atom: 0 absent, 1 positive, 2 negated.
pub type Term = Vec<u8>;

pub fn all_terms(n_atoms: usize) -> Vec<Term> {
    let mut terms = vec![vec![]];
    for _ in 0..n_atoms {
        terms = terms
            .into_iter()
            .flat_map(|t| {
                (0..3u8).map(move |v| {
                    let mut t = t.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    terms
}

pub fn assignments(n_atoms: usize) -> Vec<Vec<bool>> {
    (0..1u32 << n_atoms)
        .map(|bits| (0..n_atoms).map(|i| bits >> i & 1 == 1).collect())
        .collect()
}

pub fn to_mu(assignment: &[bool]) -> Vec<f64> {
    assignment.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
}

/// Classical DNF evaluation straight from the term list.
pub fn classical(terms: &[&Term], assignment: &[bool]) -> bool {
    terms.iter().any(|t| {
        t.iter().zip(assignment).all(|(lit, &v)| match lit {
            1 => v,
            2 => !v,
            _ => true,
        })
    })
}

/// Saturated single-label model with `n_clauses` slots, the first
/// `terms.len()` of which carry the given terms.
pub fn saturated_model(n_atoms: usize, n_clauses: usize, terms: &[&Term]) -> DnfModel {
    let mut m = DnfModel::filled(n_atoms, n_clauses, 1, OFF);
    for (c, term) in terms.iter().enumerate() {
        m.set_disj_raw(0, c, ON);
        for (k, lit) in term.iter().enumerate() {
            match lit {
                1 => m.set_conj_raw(c, k, ON),
                2 => m.set_conj_raw(c, n_atoms + k, ON),
                _ => {}
            }
        }
    }
    m
}

/// Calls `f` with every set of at most `max_clauses` distinct terms.
pub fn for_each_formula(n_atoms: usize, max_clauses: usize, mut f: impl FnMut(&[&Term])) {
    let terms = all_terms(n_atoms);
    let mut chosen: Vec<&Term> = Vec::with_capacity(max_clauses);
    fn rec<'a>(
        terms: &'a [Term],
        start: usize,
        left: usize,
        chosen: &mut Vec<&'a Term>,
        f: &mut dyn FnMut(&[&Term]),
    ) {
        f(chosen);
        if left == 0 {
            return;
        }
        for i in start..terms.len() {
            chosen.push(&terms[i]);
            rec(terms, i + 1, left - 1, chosen, f);
            chosen.pop();
        }
    }
    rec(&terms, 0, max_clauses, &mut chosen, &mut f);
}

/// Checks every formula over `n_atoms` with at most `max_clauses` clauses;
/// returns (formulas checked, mismatches).
pub fn hard_logic_sweep(n_atoms: usize, max_clauses: usize) -> (usize, usize) {
    let rows = assignments(n_atoms);
    let inputs: Vec<Vec<f64>> = rows.iter().map(|r| to_mu(r)).collect();
    let mut checked = 0;
    let mut mismatches = 0;
    for_each_formula(n_atoms, max_clauses, |terms| {
        let model = saturated_model(n_atoms, max_clauses, terms);
        let scores = model.forward_batch(&inputs).unwrap();
        for (row, sc) in rows.iter().zip(&scores) {
            let expected = if classical(terms, row) { 1.0 } else { 0.0 };
            if sc.s[0] != expected {
                mismatches += 1;
            }
        }
        checked += 1;
    });
    (checked, mismatches)
}

pub fn target_formula(v: &[bool]) -> bool {
    (v[0] && v[1]) || !v[2]
}

/// All 8 rows of (a & b) | !c, label 1 = true.
pub fn truth_table_dataset() -> Vec<TrainingExample> {
    assignments(3)
        .into_iter()
        .map(|v| TrainingExample::new(to_mu(&v), target_formula(&v) as usize))
        .collect()
}

// ---- graph helpers ----


pub fn node_name(i: usize) -> String {
    format!("n{i:02}")
}

/// Random DAG: edges only go from a higher index to a lower one, so
/// index order is a topological order.
pub fn random_dag(rng: &mut impl Rng, n: usize, edge_p: f64) -> WorkflowSpec {
    let nodes = (0..n)
        .map(|i| {
            let deps: Vec<String> = (0..i).filter(|_| rng.gen_bool(edge_p)).map(node_name).collect();
            TaskNode::new(node_name(i), OperatorKind::TaskManagement).depends_on(deps)
        })
        .collect();
    WorkflowSpec::new("random", nodes)
}

/// Adds one edge that closes a cycle: an ancestor now depends on a descendant.
/// Returns false if the DAG has no edge to reverse.
pub fn inject_back_edge(spec: &mut WorkflowSpec, rng: &mut impl Rng) -> bool {
    let edges: Vec<(usize, usize)> = spec
        .nodes
        .iter()
        .enumerate()
        .flat_map(|(i, n)| {
            n.depends_on
                .iter()
                .map(move |d| (i, d[1..].parse::<usize>().unwrap()))
                .collect::<Vec<_>>()
        })
        .collect();
    if edges.is_empty() {
        return false;
    }
    let (child, parent) = edges[rng.gen_range(0..edges.len())];
    let name = node_name(child);
    spec.nodes[parent].depends_on.push(name);
    true
}

/// Independent cycle oracle: recursive three-colour DFS over `depends_on`.
pub fn dfs_has_cycle(spec: &WorkflowSpec) -> bool {
    fn visit(spec: &WorkflowSpec, id: &str, colour: &mut BTreeMap<String, u8>) -> bool {
        match colour.get(id) {
            Some(1) => return true,
            Some(2) => return false,
            _ => {}
        }
        colour.insert(id.to_string(), 1);
        if let Some(node) = spec.node(id) {
            for d in &node.depends_on {
                if visit(spec, d, colour) {
                    return true;
                }
            }
        }
        colour.insert(id.to_string(), 2);
        false
    }
    let mut colour = BTreeMap::new();
    spec.nodes.iter().any(|n| visit(spec, &n.node_id, &mut colour))
}

/// Brute-force longest path from any root to each node, by enumerating
/// every path backwards through the dependencies.
pub fn longest_path_depths(spec: &WorkflowSpec) -> BTreeMap<String, usize> {
    fn depth(spec: &WorkflowSpec, id: &str) -> usize {
        let node = spec.node(id).unwrap();
        node.depends_on.iter().map(|d| 1 + depth(spec, d)).max().unwrap_or(0)
    }
    spec.nodes
        .iter()
        .map(|n| (n.node_id.clone(), depth(spec, &n.node_id)))
        .collect()
}


// ---- engine replay ----


/// Peak number of nodes between `started` and their outcome event.
pub fn replay_peak_running(events: &[ExecutionEvent]) -> usize {
    let mut running = BTreeSet::new();
    let mut peak = 0;
    for e in events {
        match e.kind {
            EventKind::Started => {
                running.insert(e.node_id.clone());
            }
            EventKind::Succeeded | EventKind::Failed => {
                running.remove(&e.node_id);
            }
            EventKind::Retried if e.is_node_retry() => {
                running.remove(&e.node_id);
            }
            _ => {}
        }
        peak = peak.max(running.len());
    }
    peak
}

/// Edges whose child started before its parent succeeded.
pub fn edge_order_violations(spec: &WorkflowSpec, events: &[ExecutionEvent]) -> Vec<(String, String)> {
    let seq_of = |id: &str, kind: EventKind| events.iter().find(|e| e.node_id == id && e.kind == kind).map(|e| e.seq);
    let mut bad = Vec::new();
    for n in &spec.nodes {
        let Some(started) = seq_of(&n.node_id, EventKind::Started) else { continue };
        for d in &n.depends_on {
            if seq_of(d, EventKind::Succeeded).is_none_or(|done| done > started) {
                bad.push((d.clone(), n.node_id.clone()));
            }
        }
    }
    bad
}

// ---- registry oracle ----


pub const TAGS: [&str; 5] = ["write-chapter", "check-ending", "select-trajectory", "evaluate-predicate", "summarize"];

pub fn echo_registry() -> AgentRegistry {
    let reg = AgentRegistry::new().with_probe_timeout(Duration::from_millis(500));
    reg.bind("echo", Arc::new(FnAgent::new(|v: &Value, _: &ExecutionContext| Ok(v.clone()))));
    reg
}

/// A random agent population: (spec, final status).
pub fn population(rng: &mut ChaCha8Rng) -> Vec<(AgentSpecification, AgentStatus)> {
    let names = ["ava", "bo", "cy", "di"];
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..rng.gen_range(0..10) {
        let name = names[rng.gen_range(0..names.len())];
        let version = format!("{}.{}.{}", rng.gen_range(0..3), rng.gen_range(0..12), rng.gen_range(0..3));
        if !seen.insert((name, version.clone())) {
            continue;
        }
        let caps: Vec<&str> = TAGS.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
        let caps = if caps.is_empty() { vec![TAGS[0]] } else { caps };
        let status = [AgentStatus::Published, AgentStatus::Registered, AgentStatus::Registered, AgentStatus::Retired]
            [rng.gen_range(0..4)];
        out.push((AgentSpecification::new(name, version, caps), status));
    }
    out
}

pub fn build(pop: &[(AgentSpecification, AgentStatus)]) -> AgentRegistry {
    let reg = echo_registry();
    for (spec, status) in pop {
        let d = reg.publish(spec).unwrap();
        if *status != AgentStatus::Published {
            reg.register(&d.agent_id, "inproc:echo").unwrap();
        }
        if *status == AgentStatus::Retired {
            reg.retire(&d.agent_id).unwrap();
        }
    }
    reg
}

/// Brute force: linear scan, then sort by the documented key tuple.
pub fn oracle(pop: &[(AgentSpecification, AgentStatus)], query: &BTreeSet<String>) -> Vec<String> {
    let mut hits: Vec<(usize, std::cmp::Reverse<semver::Version>, String, String)> = pop
        .iter()
        .filter(|(_, st)| *st == AgentStatus::Registered)
        .filter(|(spec, _)| query.iter().all(|q| spec.capabilities.iter().any(|c| c == q)))
        .map(|(spec, _)| {
            (
                spec.capabilities.len() - query.len(),
                std::cmp::Reverse(semver::Version::parse(&spec.version).unwrap()),
                spec.name.clone(),
                spec.agent_id(),
            )
        })
        .collect();
    // in-process agents are all healthy, so health does not split them
    hits.sort();
    hits.into_iter().map(|h| h.3).collect()
}

pub fn ids(ds: &[AgentDescriptor]) -> Vec<String> {
    ds.iter().map(|d| d.agent_id.clone()).collect()
}

// ---- gradient check ----


pub const STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Below this magnitude both gradients count as zero; the error is taken
/// relative to the floor instead.
pub const FLOOR: f64 = 1e-6;

pub fn central_difference(model: &DnfModel, example: &TrainingExample) -> Vec<f64> {
    let base = model.params();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + STEP;
        probe.set_params(&p);
        let plus = probe.example_loss(&example.atoms, example.label).unwrap();
        p[i] = base[i] - STEP;
        probe.set_params(&p);
        let minus = probe.example_loss(&example.atoms, example.label).unwrap();
        out.push((plus - minus) / (2.0 * STEP));
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

pub fn random_grad_case(seed: u64) -> (DnfModel, TrainingExample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = rng.gen_range(1..=8);
    let clauses = rng.gen_range(1..=4);
    let labels = rng.gen_range(2..=3);
    let mut model = DnfModel::filled(atoms, clauses, labels, 0.0);
    for w in model.conj_weights.iter_mut().chain(model.disj_weights.iter_mut()) {
        *w = rng.gen_range(-3.0..3.0);
    }
    model.alpha = rng.gen_range(0.5..8.0);
    let x: Vec<f64> = (0..atoms).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let label = rng.gen_range(0..labels);
    (model, TrainingExample::new(x, label))
}

pub fn max_relative_error(model: &DnfModel, example: &TrainingExample) -> f64 {
    let analytic = model
        .backward(&example.atoms, example.label)
        .unwrap()
        .flatten();
    let numeric = central_difference(model, example);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

