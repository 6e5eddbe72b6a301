use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::OperatorError;
use crate::engine::{payload, EventKind, ExecutionContext, SCOPE, SCOPE_OPERATION};
use crate::resources::{GenerationParams, ResourceHandle};

/// Suffix that asks for the numbered-steps-then-answer format.
pub const COT_SUFFIX: &str = "Respond with numbered steps, then a line 'ANSWER: <answer>'.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningMode {
    Cot,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningInput {
    /// The first line doubles as the prompt tag.
    pub question: String,
    #[serde(default)]
    pub evidence: Vec<String>,
    pub mode: ReasoningMode,
}

impl ReasoningInput {
    pub fn cot(question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            evidence: Vec::new(),
            mode: ReasoningMode::Cot,
        }
    }

    pub fn with_evidence(mut self, evidence: Vec<String>) -> Self {
        self.evidence = evidence;
        self
    }

    pub fn prompt(&self) -> String {
        let mut p = self.question.trim_end().to_string();
        if !self.evidence.is_empty() {
            p.push_str("\nEvidence:");
            for e in &self.evidence {
                p.push_str("\n- ");
                p.push_str(e);
            }
        }
        if self.mode == ReasoningMode::Cot {
            p.push('\n');
            p.push_str(COT_SUFFIX);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub steps: Vec<String>,
    pub answer: String,
    pub raw: String,
}

fn step_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d+\.\s").expect("valid regex"))
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^ANSWER:\s").expect("valid regex"))
}

/// Lines matching `^\d+\.\s` are steps; the first `^ANSWER:\s` line ends
/// parsing. `None` when no answer line is present.
pub fn parse_cot(text: &str) -> Option<ReasoningTrace> {
    let mut steps = Vec::new();
    for line in text.lines() {
        if let Some(m) = answer_re().find(line) {
            return Some(ReasoningTrace {
                steps,
                answer: line[m.end()..].trim().to_string(),
                raw: text.to_string(),
            });
        }
        if let Some(m) = step_re().find(line) {
            steps.push(line[m.end()..].trim().to_string());
        }
    }
    None
}

/// Asks the backend and parses the reply. In CoT mode a reply without an
/// answer line is a violation; the call is repeated up to `max_retries`
/// times with the seed advanced by one each time.
pub fn reason(
    handle: &ResourceHandle,
    input: &ReasoningInput,
    params: &GenerationParams,
    ctx: &ExecutionContext,
    max_retries: u32,
) -> Result<ReasoningTrace, OperatorError> {
    let prompt = input.prompt();
    let tag = prompt.lines().next().unwrap_or_default().to_string();
    let base = params.seed.unwrap_or(0);
    for attempt in 0..=max_retries {
        let p = GenerationParams {
            seed: Some(base.wrapping_add(u64::from(attempt))),
            n_samples: 1,
            ..*params
        };
        let text = handle.generate(&prompt, &p)?.first().text.clone();
        if input.mode == ReasoningMode::Direct {
            return Ok(ReasoningTrace {
                steps: Vec::new(),
                answer: text.trim().to_string(),
                raw: text,
            });
        }
        if let Some(trace) = parse_cot(&text) {
            return Ok(trace);
        }
        ctx.emit(
            EventKind::Violation,
            payload([
                ("attempt", (attempt + 1).to_string()),
                ("code", "unparseable_trace".to_string()),
                ("tag", tag.clone()),
            ]),
        );
        if attempt < max_retries {
            ctx.emit(
                EventKind::Retried,
                payload([
                    ("attempt", (attempt + 1).to_string()),
                    ("error", "unparseable_trace".to_string()),
                    ("tag", tag.clone()),
                    (SCOPE, SCOPE_OPERATION.to_string()),
                ]),
            );
        }
    }
    Err(OperatorError::UnparseableTrace(tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let t = parse_cot("1. a\n2. b\nANSWER: c").unwrap();
        assert_eq!(t.steps, ["a", "b"]);
        assert_eq!(t.answer, "c");
        let t = parse_cot("intro\n1. x\nnot a step\n10.\tten\nANSWER: y\n3. ignored\nANSWER: z").unwrap();
        assert_eq!(t.steps, ["x", "ten"]);
        assert_eq!(t.answer, "y");
        assert!(parse_cot("1. a\n2. b").is_none());
        assert!(parse_cot("ANSWER:c").is_none());
        assert!(parse_cot(" ANSWER: c").is_none());
        assert!(parse_cot("1.a\nANSWER: c").unwrap().steps.is_empty());
    }

    #[test]
    fn prompt_layout() {
        let p = ReasoningInput::cot("goal:alice:ch1\nwhat next?").with_evidence(vec!["e1".into()]).prompt();
        assert!(p.starts_with("goal:alice:ch1\n"));
        assert!(p.ends_with(COT_SUFFIX));
        assert!(p.contains("\n- e1\n"));
    }
}
