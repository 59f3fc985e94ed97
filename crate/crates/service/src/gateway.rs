//! Hosted chat-completion backend and latency measurement.

use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use ridechat_core::dialog::ModelChoice;
use ridechat_core::llm::{Completion, GatewayError, PromptBundle};
use ridechat_core::model::Role;

/// Talks the common chat-completions wire shape: `model`, `messages`,
/// `max_tokens`, `temperature` in; `choices[0].message.content` out.
pub struct HostedBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    retries: u32,
    api_key: Option<String>,
}

impl std::fmt::Debug for HostedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HostedBackend").field("url", &self.url).field("model", &self.model).finish()
    }
}

impl HostedBackend {
    pub fn new(url: String, model: String, timeout: Duration, retries: u32, api_key: Option<String>) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { agent, url, model, retries, api_key }
    }

    fn attempt(&self, body: &Value) -> Result<String, GatewayError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(GatewayError::EndpointError(status));
        }
        let value: Value = resp.body_mut().read_json().map_err(transport)?;
        parse_response(&value)
    }
}

impl Completion for HostedBackend {
    fn complete(&self, _: &ModelChoice, prompt: &PromptBundle) -> Result<String, GatewayError> {
        prompt.check()?;
        let body = wire_request(&self.model, prompt);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if attempt < self.retries && retryable(&e) => {
                    attempt += 1;
                    thread::sleep(Duration::from_millis(100 << attempt.min(5)));
                }
                other => return other,
            }
        }
    }
}

fn retryable(e: &GatewayError) -> bool {
    match e {
        GatewayError::Timeout | GatewayError::Transport(_) => true,
        GatewayError::EndpointError(s) => *s == 429 || *s >= 500,
        _ => false,
    }
}

fn transport(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        ureq::Error::StatusCode(s) => GatewayError::EndpointError(s),
        ureq::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            GatewayError::Timeout
        }
        ureq::Error::Json(j) => GatewayError::BadResponse(j.to_string()),
        other => GatewayError::Transport(other.to_string()),
    }
}

pub fn wire_request(model: &str, prompt: &PromptBundle) -> Value {
    let mut messages = vec![json!({"role": "system", "content": prompt.system})];
    for m in &prompt.messages {
        let role = match m.role {
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        messages.push(json!({"role": role, "content": m.text}));
    }
    json!({
        "model": model,
        "messages": messages,
        "max_tokens": prompt.max_tokens,
        "temperature": prompt.temperature,
    })
}

pub fn parse_response(value: &Value) -> Result<String, GatewayError> {
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))
}

/// Wall-clock statistics over repeated calls.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LatencyStats {
    pub calls: usize,
    pub failures: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[Duration], failures: usize) -> Self {
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1000.0).collect();
        ms.sort_by(f64::total_cmp);
        let mean = if ms.is_empty() { 0.0 } else { ms.iter().sum::<f64>() / ms.len() as f64 };
        Self {
            calls: samples.len(),
            failures,
            mean_ms: mean,
            p50_ms: percentile(&ms, 0.50),
            p95_ms: percentile(&ms, 0.95),
            max_ms: ms.last().copied().unwrap_or(0.0),
        }
    }
}

/// Nearest-rank percentile of sorted values; 0 for an empty slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn measure_latency(
    backend: &dyn Completion,
    choice: &ModelChoice,
    prompt: &PromptBundle,
    n: usize,
) -> LatencyStats {
    let mut samples = Vec::with_capacity(n);
    let mut failures = 0;
    for _ in 0..n {
        let t = Instant::now();
        if backend.complete(choice, prompt).is_err() {
            failures += 1;
        }
        samples.push(t.elapsed());
    }
    LatencyStats::from_samples(&samples, failures)
}
