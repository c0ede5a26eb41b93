//! OpenAI-compatible chat-completions client.
//!
//! Two kinds of requests are issued per instance:
//!
//! - one scored pass (`temperature = 0`, `max_tokens = 1`, `logprobs = true`)
//!   whose first-token alternatives are mapped onto class names and turned
//!   into `z` with [`extract_logits`](super::extract_logits);
//! - sampled passes (`temperature > 0`) until `T` completions are collected,
//!   each decoded with [`decode_label`](super::decode_label).
//!
//! Transport failures, timeouts, HTTP 429 and 5xx are retried with
//! exponential backoff; other HTTP errors and malformed bodies are protocol
//! errors.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{build_prompt, decode_label, extract_logits, AnnotatorSignal};
use crate::corpus::{Instance, LabelSpace};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSpec {
    pub model: String,
    /// Base URL such as `http://localhost:8000/v1`. Overridden by `base_url_env` when set.
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub base_url_env: Option<String>,
    /// Environment variable holding the bearer token, if the endpoint needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_top_logprobs() -> u32 {
    20
}

impl RemoteSpec {
    pub fn new(model: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            base_url: Some(base_url.into()),
            base_url_env: None,
            api_key_env: None,
            temperature: default_temperature(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            top_logprobs: default_top_logprobs(),
        }
    }

    pub(crate) fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.model.trim().is_empty() {
            out.push("model must be non-empty".into());
        }
        if self.base_url.is_none() && self.base_url_env.is_none() {
            out.push("one of base_url or base_url_env is required".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            out.push(format!("sampling temperature must be > 0, got {}", self.temperature));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            out.push(format!("timeout_secs must be > 0, got {}", self.timeout_secs));
        }
        out
    }

    fn endpoint(&self, name: &str) -> Result<String> {
        let from_env = self
            .base_url_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|v| !v.trim().is_empty());
        let base = from_env.or_else(|| self.base_url.clone()).ok_or_else(|| {
            Error::AnnotatorUnavailable {
                name: name.into(),
                reason: "no base URL configured".into(),
            }
        })?;
        Ok(format!("{}/chat/completions", base.trim_end_matches('/')))
    }

    fn api_key(&self) -> Option<String> {
        self.api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty())
    }
}

#[derive(Debug, Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u32>,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Vec<TokenLogprob>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

/// Maps first-token alternatives onto classes: a class takes the best
/// log-probability among tokens that are a non-empty prefix of its name
/// (case-insensitive, surrounding whitespace ignored).
pub fn class_logprobs<'a>(
    alternatives: impl IntoIterator<Item = (&'a str, f64)>,
    label_space: &LabelSpace,
) -> BTreeMap<usize, f64> {
    let names: Vec<String> = label_space
        .names()
        .iter()
        .map(|n| n.trim().to_lowercase())
        .collect();
    let mut out: BTreeMap<usize, f64> = BTreeMap::new();
    for (token, logprob) in alternatives {
        let token = token.trim().to_lowercase();
        if token.is_empty() {
            continue;
        }
        for (k, name) in names.iter().enumerate() {
            if name.starts_with(&token) {
                let slot = out.entry(k).or_insert(f64::NEG_INFINITY);
                *slot = slot.max(logprob);
            }
        }
    }
    out
}

struct Client<'a> {
    name: &'a str,
    spec: &'a RemoteSpec,
    url: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl<'a> Client<'a> {
    fn new(name: &'a str, spec: &'a RemoteSpec) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(spec.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            name,
            spec,
            url: spec.endpoint(name)?,
            key: spec.api_key(),
            agent,
        })
    }

    fn protocol(&self, reason: impl Into<String>) -> Error {
        Error::Protocol {
            name: self.name.into(),
            reason: reason.into(),
        }
    }

    fn post(&self, body: &ChatRequest<'_>) -> Result<ChatResponse> {
        let mut last_failure = String::new();
        for attempt in 0..=self.spec.retries {
            if attempt > 0 {
                let wait = self.spec.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(wait));
            }
            let mut request = self.agent.post(&self.url);
            if let Some(key) = &self.key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            let mut response = match request.send_json(body) {
                Ok(r) => r,
                Err(e) => {
                    last_failure = e.to_string();
                    continue;
                }
            };
            let status = response.status().as_u16();
            if status == 429 || status >= 500 {
                last_failure = format!("HTTP {status}");
                continue;
            }
            let text = match response.body_mut().read_to_string() {
                Ok(t) => t,
                Err(e) => {
                    last_failure = e.to_string();
                    continue;
                }
            };
            if !(200..300).contains(&status) {
                return Err(self.protocol(format!("HTTP {status}: {}", truncate(&text))));
            }
            return serde_json::from_str(&text)
                .map_err(|e| self.protocol(format!("malformed response ({e}): {}", truncate(&text))));
        }
        Err(Error::AnnotatorUnavailable {
            name: self.name.into(),
            reason: format!(
                "{} attempt(s) failed, last: {last_failure}",
                self.spec.retries + 1
            ),
        })
    }
}

fn truncate(text: &str) -> String {
    text.chars().take(200).collect()
}

pub(crate) fn query(
    name: &str,
    spec: &RemoteSpec,
    repeats: usize,
    instance: &Instance,
    label_space: &LabelSpace,
    seed: u64,
) -> Result<AnnotatorSignal> {
    let client = Client::new(name, spec)?;
    let prompt = build_prompt(instance, label_space);
    let cell_seed = rng::derive_seed_parts(seed, "remote-annotator", &[name, &instance.id]);

    let scored = client.post(&ChatRequest {
        model: &spec.model,
        messages: [Message {
            role: "user",
            content: &prompt,
        }],
        temperature: 0.0,
        n: 1,
        max_tokens: Some(1),
        logprobs: true,
        top_logprobs: Some(spec.top_logprobs),
        seed: cell_seed,
    })?;
    let first = scored
        .choices
        .first()
        .and_then(|c| c.logprobs.as_ref())
        .and_then(|l| l.content.first())
        .ok_or_else(|| client.protocol("scored pass returned no token log-probabilities"))?;
    let alternatives = std::iter::once((first.token.as_str(), first.logprob)).chain(
        first
            .top_logprobs
            .iter()
            .map(|t| (t.token.as_str(), t.logprob)),
    );
    let z = extract_logits(&class_logprobs(alternatives, label_space), label_space.len())?;

    let mut decoded = Vec::with_capacity(repeats);
    let mut round = 0u64;
    while decoded.len() < repeats {
        let response = client.post(&ChatRequest {
            model: &spec.model,
            messages: [Message {
                role: "user",
                content: &prompt,
            }],
            temperature: spec.temperature,
            n: repeats - decoded.len(),
            max_tokens: None,
            logprobs: false,
            top_logprobs: None,
            seed: rng::derive_seed(cell_seed, "sample", round),
        })?;
        if response.choices.is_empty() {
            return Err(client.protocol("sampling pass returned no choices"));
        }
        for choice in response.choices.into_iter().take(repeats - decoded.len()) {
            let text = choice.message.content.unwrap_or_default();
            decoded.push(decode_label(&text, label_space));
        }
        round += 1;
    }
    AnnotatorSignal::from_parts(z, decoded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_tokens_map_to_classes() {
        let space = LabelSpace::new(["World", "Sports", "Business", "Sci/Tech"]).unwrap();
        let lp = class_logprobs(
            [
                ("Sports", -0.2),
                (" Sp", -2.5),
                ("Bus", -1.9),
                ("\n", -3.0),
                ("W", -4.0),
                ("Sci", -2.2),
                ("Politics", -1.0),
            ],
            &space,
        );
        assert_eq!(lp.get(&1), Some(&-0.2));
        assert_eq!(lp.get(&2), Some(&-1.9));
        assert_eq!(lp.get(&0), Some(&-4.0));
        assert_eq!(lp.get(&3), Some(&-2.2));
    }

    #[test]
    fn request_serialization_skips_unused_fields() {
        let req = ChatRequest {
            model: "m",
            messages: [Message {
                role: "user",
                content: "hi",
            }],
            temperature: 1.0,
            n: 3,
            max_tokens: None,
            logprobs: false,
            top_logprobs: None,
            seed: 1,
        };
        let v = serde_json::to_value(&req).unwrap();
        assert!(v.get("logprobs").is_none());
        assert!(v.get("max_tokens").is_none());
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["n"], 3);
    }
}
