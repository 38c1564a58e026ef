//! Administers control/treatment test cases to a chat-completion endpoint
//! and turns the completions into response records.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BiasId, Condition, Orientation, ResponseRecord, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Grid value for scale answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// One matched prompt pair, as read from a JSONL case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub bias: BiasId,
    pub scenario_id: u32,
    pub instance_id: u32,
    pub control_prompt: String,
    pub treatment_prompt: String,
    pub options: Vec<AnswerOption>,
    pub scale: Scale,
    pub k: Orientation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_option: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("case ({bias}, scenario {scenario_id}, instance {instance_id}): {message}")]
    InvalidCase { bias: BiasId, scenario_id: u32, instance_id: u32, message: String },
    #[error("endpoint rejected credentials: {0}")]
    Auth(String),
    #[error("endpoint setup failed: {0}")]
    Setup(String),
}

impl TestCase {
    pub fn check(&self) -> Result<(), HarnessError> {
        let fail = |message: String| HarnessError::InvalidCase {
            bias: self.bias,
            scenario_id: self.scenario_id,
            instance_id: self.instance_id,
            message,
        };
        if self.options.is_empty() {
            return Err(fail("option list is empty".into()));
        }
        match self.scale {
            Scale::TargetChoice => {
                let target = self.target_option.as_ref().ok_or_else(|| fail("missing target option".into()))?;
                if !self.options.iter().any(|o| &o.label == target) {
                    return Err(fail(format!("target option `{target}` is not among the options")));
                }
            }
            scale => {
                for o in &self.options {
                    match o.value {
                        Some(v) if scale.on_grid(v) => {}
                        _ => return Err(fail(format!("option `{}` has no value on the {scale:?} grid", o.label))),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn prompt(&self, condition: Condition) -> String {
        let body = match condition {
            Condition::Control => &self.control_prompt,
            Condition::Treatment => &self.treatment_prompt,
        };
        let listed: Vec<String> =
            self.options.iter().filter_map(|o| o.text.as_ref().map(|t| format!("{}. {}", o.label, t))).collect();
        if listed.is_empty() {
            body.clone()
        } else {
            format!("{body}\n\n{}", listed.join("\n"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            token_env: Some("BIASTRACE_API_TOKEN".into()),
            timeout_secs: 60,
            max_in_flight: 4,
            max_retries: 3,
            backoff_ms: 250,
            max_backoff_ms: 8000,
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

impl EndpointConfig {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

/// Failure of one completion request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Credentials rejected; aborts the whole administration.
    Auth(String),
    /// Worth retrying (connection trouble, rate limits, server errors).
    Transient(String),
    /// The endpoint answered, but not with a usable completion.
    Malformed(String),
}

/// Something that turns a prompt into completion text.
pub trait ChatBackend {
    fn complete(&self, prompt: &str) -> impl std::future::Future<Output = Result<String, BackendError>>;
}

/// Chat-completion client over HTTP.
pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    model: String,
    token: Option<String>,
    temperature: f64,
    max_tokens: Option<u32>,
}

impl HttpBackend {
    pub fn new(config: &EndpointConfig) -> Result<Self, HarnessError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| HarnessError::Setup(e.to_string()))?;
        let token = config.token_env.as_ref().and_then(|v| std::env::var(v).ok());
        Ok(Self {
            client,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            token,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        })
    }
}

impl ChatBackend for HttpBackend {
    async fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.temperature,
        });
        if let Some(n) = self.max_tokens {
            body["max_tokens"] = n.into();
        }
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(status.to_string()));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(BackendError::Transient(status.to_string()));
        }
        if !status.is_success() {
            return Err(BackendError::Malformed(status.to_string()));
        }
        let v: serde_json::Value = resp.json().await.map_err(|e| BackendError::Malformed(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("completion has no choices[0].message.content".into()))
    }
}

/// Result of scanning a completion for an option label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub answer: Option<String>,
    /// More than one distinct label appeared; the first one was taken.
    pub ambiguous: bool,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Earliest occurrence of any label as a whole word, scanning left to right.
/// On equal start positions the longer label wins.
pub fn extract_answer(text: &str, labels: &[&str]) -> Extraction {
    let mut hits: Vec<(usize, usize, &str)> = Vec::new();
    for &label in labels {
        if label.is_empty() {
            continue;
        }
        for (pos, _) in text.match_indices(label) {
            let before = text[..pos].chars().next_back();
            let after = text[pos + label.len()..].chars().next();
            if !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char) {
                hits.push((pos, label.len(), label));
            }
        }
    }
    hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let distinct: BTreeSet<&str> = hits.iter().map(|h| h.2).collect();
    Extraction { answer: hits.first().map(|h| h.2.to_string()), ambiguous: distinct.len() > 1 }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdministerStats {
    pub requests: usize,
    pub answered: usize,
    pub non_response: usize,
    /// Requests that still failed after all retries.
    pub failed_requests: usize,
    pub malformed: usize,
    pub ambiguous: usize,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Administration {
    pub records: Vec<ResponseRecord>,
    pub stats: AdministerStats,
}

enum Outcome {
    Text(String),
    Failed,
    Malformed,
}

async fn request_with_retry<B: ChatBackend>(
    backend: &B,
    prompt: &str,
    config: &EndpointConfig,
) -> Result<(Outcome, usize), HarnessError> {
    let mut retries = 0;
    loop {
        match backend.complete(prompt).await {
            Ok(text) => return Ok((Outcome::Text(text), retries)),
            Err(BackendError::Auth(msg)) => return Err(HarnessError::Auth(msg)),
            Err(BackendError::Malformed(msg)) => {
                log::warn!("unusable completion: {msg}");
                return Ok((Outcome::Malformed, retries));
            }
            Err(BackendError::Transient(msg)) => {
                if retries as u32 >= config.max_retries {
                    log::warn!("request failed after {retries} retries: {msg}");
                    return Ok((Outcome::Failed, retries));
                }
                tokio::time::sleep(config.backoff(retries as u32)).await;
                retries += 1;
            }
        }
    }
}

fn record_order(a: &ResponseRecord, b: &ResponseRecord) -> Ordering {
    a.instance_key().cmp(&b.instance_key()).then(a.condition.cmp(&b.condition))
}

/// Sends both prompts of every case, at most `max_in_flight` at a time.
///
/// Every (case, condition) yields exactly one record; failed or unparseable
/// completions become non-responses. Output is sorted by instance and
/// condition, so it does not depend on completion order.
pub async fn administer<B: ChatBackend>(
    cases: &[TestCase],
    run_id: &str,
    backend: &B,
    config: &EndpointConfig,
) -> Result<Administration, HarnessError> {
    for c in cases {
        c.check()?;
    }
    let jobs = cases.iter().flat_map(|c| [Condition::Control, Condition::Treatment].map(move |cond| (c, cond)));
    let results: Vec<_> = stream::iter(jobs)
        .map(|(case, condition)| async move {
            let prompt = case.prompt(condition);
            request_with_retry(backend, &prompt, config).await.map(|r| (case, condition, r))
        })
        .buffer_unordered(config.max_in_flight.max(1))
        .collect()
        .await;

    let mut stats = AdministerStats::default();
    let mut records = Vec::with_capacity(results.len());
    for res in results {
        let (case, condition, (outcome, retries)) = res?;
        stats.requests += 1;
        stats.retries += retries;
        let mut rec = ResponseRecord {
            run_id: run_id.to_string(),
            bias: case.bias,
            scenario_id: case.scenario_id,
            instance_id: case.instance_id,
            condition,
            scale: case.scale,
            answer_value: None,
            answer_option: None,
            k: case.k,
            target_option: case.target_option.clone(),
        };
        match outcome {
            Outcome::Failed => stats.failed_requests += 1,
            Outcome::Malformed => stats.malformed += 1,
            Outcome::Text(text) => {
                let labels: Vec<&str> = case.options.iter().map(|o| o.label.as_str()).collect();
                let ex = extract_answer(&text, &labels);
                stats.ambiguous += usize::from(ex.ambiguous);
                if let Some(label) = ex.answer {
                    let opt = case.options.iter().find(|o| o.label == label).expect("label came from options");
                    rec.answer_value = opt.value.filter(|_| case.scale != Scale::TargetChoice);
                    rec.answer_option = Some(label);
                }
            }
        }
        if rec.is_response() {
            stats.answered += 1;
        } else {
            stats.non_response += 1;
        }
        records.push(rec);
    }
    records.sort_by(record_order);
    Ok(Administration { records, stats })
}

/// [`administer`] on a fresh runtime, for synchronous callers.
pub fn administer_blocking<B: ChatBackend>(
    cases: &[TestCase],
    run_id: &str,
    backend: &B,
    config: &EndpointConfig,
) -> Result<Administration, HarnessError> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| HarnessError::Setup(e.to_string()))?;
    rt.block_on(administer(cases, run_id, backend, config))
}
