use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EventKind, ExecutionEvent, NodeStatus, StrategyParams, WorkflowInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub f_hi: f64,
    pub f_lo: f64,
    /// Number of trailing attempt outcomes the failure rate is taken over.
    pub window: usize,
    pub max_backoff_scale: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            f_hi: 0.2,
            f_lo: 0.05,
            window: 20,
            max_backoff_scale: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub status: NodeStatus,
    pub attempts: u32,
    /// Duration of the final attempt, once the node is terminal.
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub nodes: BTreeMap<String, NodeMetrics>,
    pub counts: BTreeMap<NodeStatus, usize>,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    /// Terminally failed nodes over nodes that finished succeeded or failed.
    pub failure_rate: f64,
    /// Failed attempts over the trailing window of attempt outcomes.
    pub window_failure_rate: f64,
    pub window_len: usize,
    pub concurrency_cap: usize,
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

fn latency_ms(e: &ExecutionEvent) -> Option<f64> {
    e.payload.get("latency_us")?.parse::<f64>().ok().map(|us| us / 1000.0)
}

impl MetricsSummary {
    /// Pure function of the node set and the event log.
    pub fn from_events<'a>(
        node_ids: impl IntoIterator<Item = &'a str>,
        concurrency_cap: usize,
        events: &[ExecutionEvent],
        window: usize,
    ) -> Self {
        let mut nodes: BTreeMap<String, NodeMetrics> = node_ids
            .into_iter()
            .map(|id| {
                let m = NodeMetrics {
                    status: NodeStatus::Pending,
                    attempts: 0,
                    latency_ms: None,
                };
                (id.to_string(), m)
            })
            .collect();
        let mut outcomes = Vec::new();
        for e in events {
            let Some(m) = nodes.get_mut(&e.node_id) else { continue };
            match e.kind {
                EventKind::Scheduled => m.status = NodeStatus::Ready,
                EventKind::Started => {
                    m.status = NodeStatus::Running;
                    m.attempts += 1;
                }
                EventKind::Succeeded => {
                    m.status = NodeStatus::Succeeded;
                    m.latency_ms = latency_ms(e);
                    outcomes.push(false);
                }
                EventKind::Failed => {
                    m.status = NodeStatus::Failed;
                    m.latency_ms = latency_ms(e);
                    outcomes.push(true);
                }
                EventKind::Retried if e.is_node_retry() => {
                    m.status = NodeStatus::Failed;
                    outcomes.push(true);
                }
                EventKind::Cancelled => m.status = NodeStatus::Cancelled,
                _ => {}
            }
        }
        let mut counts: BTreeMap<NodeStatus, usize> = NodeStatus::ALL.iter().map(|s| (*s, 0)).collect();
        for m in nodes.values() {
            *counts.get_mut(&m.status).expect("all statuses present") += 1;
        }
        let mut latencies: Vec<f64> = nodes
            .values()
            .filter(|m| matches!(m.status, NodeStatus::Succeeded | NodeStatus::Failed))
            .filter_map(|m| m.latency_ms)
            .collect();
        latencies.sort_by(f64::total_cmp);
        let finished = counts[&NodeStatus::Succeeded] + counts[&NodeStatus::Failed];
        let failure_rate = if finished == 0 {
            0.0
        } else {
            counts[&NodeStatus::Failed] as f64 / finished as f64
        };
        let tail = &outcomes[outcomes.len().saturating_sub(window)..];
        let window_failure_rate = if tail.is_empty() {
            0.0
        } else {
            tail.iter().filter(|f| **f).count() as f64 / tail.len() as f64
        };
        Self {
            nodes,
            counts,
            p50_ms: nearest_rank(&latencies, 50.0),
            p95_ms: nearest_rank(&latencies, 95.0),
            failure_rate,
            window_failure_rate,
            window_len: tail.len(),
            concurrency_cap,
        }
    }
}

pub fn monitor_snapshot(instance: &WorkflowInstance) -> MetricsSummary {
    MetricsSummary::from_events(
        instance.spec.nodes.iter().map(|n| n.node_id.as_str()),
        instance.spec.concurrency_cap,
        &instance.event_log,
        OptimizerConfig::default().window,
    )
}

/// Feedback rule on the trailing-window failure rate: above `f_hi` halve
/// parallelism and double the backoff scale; below `f_lo` add one unit of
/// parallelism up to the cap; otherwise leave the strategy alone.
pub fn optimize(metrics: &MetricsSummary, current: &StrategyParams, cfg: &OptimizerConfig) -> StrategyParams {
    let cap = metrics.concurrency_cap.max(1);
    let mut next = *current;
    let rate = metrics.window_failure_rate;
    if rate > cfg.f_hi {
        next.parallelism = (current.parallelism / 2).max(1);
        next.backoff_scale = (current.backoff_scale * 2.0).min(cfg.max_backoff_scale);
    } else if rate < cfg.f_lo && current.parallelism < cap {
        next.parallelism = current.parallelism + 1;
    }
    next.parallelism = next.parallelism.clamp(1, cap);
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(rate: f64, cap: usize) -> MetricsSummary {
        MetricsSummary {
            nodes: BTreeMap::new(),
            counts: BTreeMap::new(),
            p50_ms: None,
            p95_ms: None,
            failure_rate: rate,
            window_failure_rate: rate,
            window_len: 20,
            concurrency_cap: cap,
        }
    }

    fn strategy(parallelism: usize, backoff_scale: f64) -> StrategyParams {
        StrategyParams {
            parallelism,
            retry_budget: 10,
            backoff_scale,
        }
    }

    #[test]
    fn rule_application() {
        let cfg = OptimizerConfig::default();
        assert_eq!(optimize(&summary(0.0, 5), &strategy(3, 1.0), &cfg).parallelism, 4);
        let s = optimize(&summary(0.5, 5), &strategy(4, 1.0), &cfg);
        assert_eq!((s.parallelism, s.backoff_scale), (2, 2.0));
        assert_eq!(optimize(&summary(0.1, 5), &strategy(3, 1.0), &cfg), strategy(3, 1.0));
        assert_eq!(optimize(&summary(0.0, 5), &strategy(5, 1.0), &cfg).parallelism, 5);
        let s = optimize(&summary(0.9, 5), &strategy(1, 6.0), &cfg);
        assert_eq!((s.parallelism, s.backoff_scale), (1, 8.0));
    }

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50.0), Some(50.0));
        assert_eq!(nearest_rank(&v, 95.0), Some(95.0));
        assert_eq!(nearest_rank(&[3.0], 95.0), Some(3.0));
        assert_eq!(nearest_rank(&[], 50.0), None);
    }
}
