use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Completion, FinishReason, GenerationParams, ModelProvider, ResourceError, TokenLogits, Usage};

/// Text returned in place of a completion when a fault is injected.
pub const MALFORMED_OUTPUT: &str = "<<malformed output>>";

/// One scripted fixture entry. Exactly one field is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<YesNoLogits>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YesNoLogits {
    pub yes: f64,
    pub no: f64,
}

impl MockEntry {
    pub fn text(t: impl Into<String>) -> Self {
        Self { text: Some(t.into()), samples: None, logits: None }
    }

    pub fn samples<S: Into<String>>(s: impl IntoIterator<Item = S>) -> Self {
        Self {
            text: None,
            samples: Some(s.into_iter().map(Into::into).collect()),
            logits: None,
        }
    }

    pub fn logits(yes: f64, no: f64) -> Self {
        Self { text: None, samples: None, logits: Some(YesNoLogits { yes, no }) }
    }

    fn is_well_formed(&self) -> bool {
        let set = usize::from(self.text.is_some())
            + usize::from(self.samples.as_ref().is_some_and(|s| !s.is_empty()))
            + usize::from(self.logits.is_some());
        set == 1
    }
}

/// Map from prompt tag (the prompt's first line) to scripted response.
/// A key ending in `*` matches any tag with that prefix; exact keys win,
/// then the longest prefix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockFixture(pub BTreeMap<String, MockEntry>);

impl MockFixture {
    pub fn from_json(text: &str) -> Result<Self, ResourceError> {
        let f: MockFixture =
            serde_json::from_str(text).map_err(|e| ResourceError::InvalidCatalog(format!("mock fixture: {e}")))?;
        if let Some((tag, _)) = f.0.iter().find(|(_, e)| !e.is_well_formed()) {
            return Err(ResourceError::InvalidCatalog(format!(
                "mock fixture entry `{tag}` must set exactly one of text, samples, logits"
            )));
        }
        Ok(f)
    }

    pub fn insert(&mut self, tag: impl Into<String>, entry: MockEntry) -> &mut Self {
        self.0.insert(tag.into(), entry);
        self
    }

    pub fn lookup(&self, tag: &str) -> Option<&MockEntry> {
        if let Some(e) = self.0.get(tag) {
            return Some(e);
        }
        self.0
            .iter()
            .filter_map(|(k, e)| k.strip_suffix('*').filter(|p| tag.starts_with(p)).map(|p| (p.len(), e)))
            .max_by_key(|(len, _)| *len)
            .map(|(_, e)| e)
    }
}

pub(crate) fn prompt_tag(prompt: &str) -> &str {
    prompt.lines().next().unwrap_or("").trim()
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

/// Deterministic scripted backend: the response is a pure function of
/// fixture, prompt and seed. `samples` entries answer with
/// `samples[seed % len]`; unmatched prompts get a hash-derived filler.
#[derive(Debug, Clone)]
pub struct MockProvider {
    fixture: Arc<MockFixture>,
}

impl MockProvider {
    pub fn new(fixture: MockFixture) -> Self {
        Self { fixture: Arc::new(fixture) }
    }
}

impl ModelProvider for MockProvider {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion, ResourceError> {
        let seed = params.seed.unwrap_or(0);
        let mut token_logits = None;
        let text = match self.fixture.lookup(prompt_tag(prompt)) {
            Some(MockEntry { text: Some(t), .. }) => t.clone(),
            Some(MockEntry { samples: Some(s), .. }) if !s.is_empty() => s[(seed % s.len() as u64) as usize].clone(),
            Some(MockEntry { logits: Some(l), .. }) => {
                let answer = if l.yes >= l.no { "Yes" } else { "No" };
                token_logits = Some(vec![TokenLogits {
                    token: answer.to_string(),
                    alternatives: vec![("Yes".into(), l.yes), ("No".into(), l.no)],
                }]);
                answer.to_string()
            }
            _ => {
                let mut h = Sha256::new();
                h.update(prompt.as_bytes());
                h.update(seed.to_le_bytes());
                format!("mock-{}", &hex::encode(h.finalize())[..16])
            }
        };
        let usage = Usage {
            prompt_tokens: word_count(prompt),
            completion_tokens: word_count(&text),
        };
        Ok(Completion {
            text,
            finish_reason: FinishReason::Stop,
            token_logits,
            usage,
        })
    }
}

/// Wraps a provider and replaces a seeded fraction of completions whose
/// prompt tag starts with one of `tag_prefixes` by [`MALFORMED_OUTPUT`].
pub struct FaultInjector {
    inner: Arc<dyn ModelProvider>,
    rate: f64,
    seed: u64,
    tag_prefixes: Vec<String>,
    injected: AtomicU64,
}

impl FaultInjector {
    pub fn new(inner: Arc<dyn ModelProvider>, rate: f64, seed: u64, tag_prefixes: Vec<String>) -> Self {
        Self {
            inner,
            rate: rate.clamp(0.0, 1.0),
            seed,
            tag_prefixes,
            injected: AtomicU64::new(0),
        }
    }

    /// Faults injected so far.
    pub fn injected(&self) -> u64 {
        self.injected.load(Ordering::Relaxed)
    }

    fn should_fault(&self, prompt: &str, params: &GenerationParams) -> bool {
        let tag = prompt_tag(prompt);
        if !self.tag_prefixes.iter().any(|p| tag.starts_with(p.as_str())) {
            return false;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(params.seed.unwrap_or(0).to_le_bytes());
        h.update(prompt.as_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().unwrap());
        (x >> 11) as f64 / (1u64 << 53) as f64 > 1.0 - self.rate
    }
}

impl ModelProvider for FaultInjector {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion, ResourceError> {
        if self.should_fault(prompt, params) {
            self.injected.fetch_add(1, Ordering::Relaxed);
            return Ok(Completion {
                text: MALFORMED_OUTPUT.to_string(),
                finish_reason: FinishReason::Stop,
                token_logits: None,
                usage: Usage {
                    prompt_tokens: word_count(prompt),
                    completion_tokens: 2,
                },
            });
        }
        self.inner.complete(prompt, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> MockFixture {
        let mut f = MockFixture::default();
        f.insert("goal:alice:ch1", MockEntry::text("reach the tower"))
            .insert("ask:x", MockEntry::samples(["Yes", "No", "maybe"]))
            .insert("ask:*", MockEntry::text("No"))
            .insert("ask:long*", MockEntry::text("Yes"))
            .insert("open", MockEntry::logits(1.0986, 0.0));
        f
    }

    #[test]
    fn scripted_lookup() {
        let m = MockProvider::new(fixture());
        let p = GenerationParams::seeded(0);
        assert_eq!(m.complete("goal:alice:ch1\nctx", &p).unwrap().text, "reach the tower");
        assert_eq!(m.complete("ask:x", &GenerationParams::seeded(4)).unwrap().text, "No");
        assert_eq!(m.complete("ask:other", &p).unwrap().text, "No");
        assert_eq!(m.complete("ask:longer", &p).unwrap().text, "Yes");
        let c = m.complete("open", &p).unwrap();
        assert_eq!(c.token_logits.unwrap()[0].alternatives[0], ("Yes".to_string(), 1.0986));
    }

    #[test]
    fn filler_depends_on_prompt_and_seed() {
        let m = MockProvider::new(MockFixture::default());
        let a = m.complete("zzz", &GenerationParams::seeded(1)).unwrap().text;
        let b = m.complete("zzz", &GenerationParams::seeded(2)).unwrap().text;
        assert_ne!(a, b);
        assert_eq!(a, m.complete("zzz", &GenerationParams::seeded(1)).unwrap().text);
        assert!(a.starts_with("mock-"));
    }

    #[test]
    fn fixture_entries_are_checked() {
        assert!(MockFixture::from_json(r#"{"a":{"text":"x","samples":["y"]}}"#).is_err());
        assert!(MockFixture::from_json(r#"{"a":{}}"#).is_err());
        assert!(MockFixture::from_json(r#"{"a":{"samples":[]}}"#).is_err());
        assert!(MockFixture::from_json(r#"{"a":{"logits":{"yes":1,"no":0}}}"#).is_ok());
    }

    #[test]
    fn fault_rate_is_roughly_honoured() {
        let inner: Arc<dyn ModelProvider> = Arc::new(MockProvider::new(fixture()));
        let f = FaultInjector::new(inner, 0.3, 5, vec!["goal:".into()]);
        let n = 2000;
        for s in 0..n {
            f.complete("goal:alice:ch1", &GenerationParams::seeded(s)).unwrap();
        }
        let rate = f.injected() as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.04, "{rate}");
        f.complete("ask:x", &GenerationParams::seeded(0)).unwrap();
        let before = f.injected();
        for s in 0..100 {
            assert_ne!(f.complete("ask:x", &GenerationParams::seeded(s)).unwrap().text, MALFORMED_OUTPUT);
        }
        assert_eq!(f.injected(), before);
    }
}
