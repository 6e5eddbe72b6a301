use std::time::Duration;

use serde_json::{json, Value};

use super::{
    BackendErrorClass, Completion, FinishReason, GenerationParams, ModelProvider, ResourceDescriptor,
    ResourceError, TokenLogits, Usage,
};

const TOP_LOGPROBS: u32 = 5;

/// Client for the chat-completion HTTP shape (`POST /v1/chat/completions`).
#[derive(Debug, Clone)]
pub struct HttpProvider {
    url: String,
    model: String,
    secret: Option<String>,
    logprobs: bool,
    timeout: Duration,
}

impl HttpProvider {
    pub fn new(desc: &ResourceDescriptor, secret: Option<String>) -> Self {
        let base = desc.uri.split('?').next().unwrap_or_default().trim_end_matches('/');
        Self {
            url: format!("{base}/v1/chat/completions"),
            model: desc.model.clone().unwrap_or_else(|| "default".into()),
            secret,
            logprobs: desc.supports_logprobs,
            timeout: Duration::from_millis(desc.limits.timeout_ms),
        }
    }

    pub fn request_body(&self, prompt: &str, params: &GenerationParams) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
            "logprobs": self.logprobs,
        });
        if self.logprobs {
            body["top_logprobs"] = json!(TOP_LOGPROBS);
        }
        body
    }

    fn parse_response(&self, v: &Value) -> Result<Completion, ResourceError> {
        let parse_err = |m: &str| ResourceError::backend(BackendErrorClass::Parse, false, m);
        let choice = v["choices"].get(0).ok_or_else(|| parse_err("response has no choices"))?;
        let text = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| parse_err("choice has no message content"))?
            .to_string();
        let finish_reason = match choice["finish_reason"].as_str() {
            None | Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        };
        let token_logits = if self.logprobs {
            choice["logprobs"]["content"].as_array().map(|tokens| {
                tokens
                    .iter()
                    .map(|t| TokenLogits {
                        token: t["token"].as_str().unwrap_or_default().to_string(),
                        alternatives: t["top_logprobs"]
                            .as_array()
                            .map(|alts| {
                                alts.iter()
                                    .filter_map(|a| Some((a["token"].as_str()?.to_string(), a["logprob"].as_f64()?)))
                                    .collect()
                            })
                            .unwrap_or_default(),
                    })
                    .collect()
            })
        } else {
            None
        };
        let usage = Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(Completion {
            text,
            finish_reason,
            token_logits,
            usage,
        })
    }
}

impl ModelProvider for HttpProvider {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion, ResourceError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&self.url);
        if let Some(secret) = &self.secret {
            req = req.header("Authorization", &format!("Bearer {secret}"));
        }
        let mut resp = req.send_json(self.request_body(prompt, params)).map_err(|e| match e {
            ureq::Error::Timeout(_) => ResourceError::backend(BackendErrorClass::Timeout, true, e.to_string()),
            other => ResourceError::backend(BackendErrorClass::Http, true, other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if status == 429 {
            return Err(ResourceError::RateLimited);
        }
        if status >= 400 {
            return Err(ResourceError::backend(
                BackendErrorClass::Http,
                status >= 500,
                format!("http status {status}"),
            ));
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ResourceError::backend(BackendErrorClass::Parse, false, e.to_string()))?;
        self.parse_response(&body)
    }
}
