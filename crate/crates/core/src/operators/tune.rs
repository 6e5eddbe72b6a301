use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Minimum observations per backend before its failure rate is trusted.
pub const MIN_BACKEND_SAMPLES: usize = 5;
pub const TIMEOUT_FRACTION: f64 = 0.25;
pub const MAX_TIMEOUT_MULTIPLE: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPolicy {
    pub preferred_backend: String,
    #[serde(default)]
    pub alternates: Vec<String>,
    pub max_attempts: u32,
    pub timeout_ms: u64,
    /// The timeout the policy started from; growth is capped relative to it.
    pub base_timeout_ms: u64,
}

impl TaskPolicy {
    pub fn new(preferred_backend: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            preferred_backend: preferred_backend.into(),
            alternates: Vec::new(),
            max_attempts: 3,
            timeout_ms,
            base_timeout_ms: timeout_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Timeout,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub backend: String,
    pub outcome: Outcome,
    #[serde(default)]
    pub latency_ms: f64,
}

/// Doubles the timeout (up to 10x the base) when more than a quarter of the
/// history timed out, and switches to a configured alternate whose observed
/// failure rate is strictly lower than the preferred backend's, both over at
/// least five samples.
pub fn tune(history: &[TaskMetrics], current: &TaskPolicy) -> TaskPolicy {
    let mut next = current.clone();
    if history.is_empty() {
        return next;
    }
    let timeouts = history.iter().filter(|m| m.outcome == Outcome::Timeout).count();
    if timeouts as f64 / history.len() as f64 > TIMEOUT_FRACTION {
        let cap = current.base_timeout_ms.saturating_mul(MAX_TIMEOUT_MULTIPLE);
        next.timeout_ms = current.timeout_ms.saturating_mul(2).min(cap).max(current.timeout_ms.min(cap));
    }
    let mut per_backend: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for m in history {
        let e = per_backend.entry(m.backend.as_str()).or_default();
        e.0 += 1;
        if m.outcome != Outcome::Success {
            e.1 += 1;
        }
    }
    let rate = |b: &str| {
        per_backend
            .get(b)
            .filter(|(n, _)| *n >= MIN_BACKEND_SAMPLES)
            .map(|(n, f)| *f as f64 / *n as f64)
    };
    if let Some(current_rate) = rate(&current.preferred_backend) {
        let best = current
            .alternates
            .iter()
            .filter(|a| **a != current.preferred_backend)
            .filter_map(|a| rate(a).map(|r| (r, a)))
            .fold(None::<(f64, &String)>, |best, (r, a)| match best {
                Some((br, _)) if br <= r => best,
                _ => Some((r, a)),
            });
        if let Some((r, alt)) = best {
            if r < current_rate {
                next.preferred_backend = alt.clone();
            }
        }
    }
    next
}
