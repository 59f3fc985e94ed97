//! Completion interface shared by hosted and scripted model backends.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::dialog::ModelChoice;
use crate::model::Role;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub messages: Vec<Message>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl PromptBundle {
    pub fn new(system: impl Into<String>, messages: Vec<Message>) -> Self {
        Self { system: system.into(), messages, max_tokens: 512, temperature: 0.0 }
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidPrompt("no messages".into()));
        }
        if self.max_tokens == 0 || self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidPrompt("bad sampling parameters".into()));
        }
        Ok(())
    }

    /// System text followed by every message, newline separated. Scripted
    /// rules match against exactly this string.
    pub fn concatenated(&self) -> String {
        let mut out = self.system.clone();
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.text);
        }
        out
    }

    pub fn last_text(&self) -> &str {
        self.messages.last().map_or("", |m| m.text.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum GatewayError {
    #[error("model call timed out")]
    Timeout,
    #[error("endpoint returned status {0}")]
    EndpointError(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed endpoint response: {0}")]
    BadResponse(String),
    #[error("no scripted rule matched")]
    NoRuleMatched,
    #[error("no backend configured for endpoint `{0}`")]
    MissingConfig(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
}

pub trait Completion: Send + Sync {
    fn complete(&self, choice: &ModelChoice, prompt: &PromptBundle) -> Result<String, GatewayError>;
}

impl<T: Completion + ?Sized> Completion for Arc<T> {
    fn complete(&self, choice: &ModelChoice, prompt: &PromptBundle) -> Result<String, GatewayError> {
        (**self).complete(choice, prompt)
    }
}

impl<T: Completion + ?Sized> Completion for Box<T> {
    fn complete(&self, choice: &ModelChoice, prompt: &PromptBundle) -> Result<String, GatewayError> {
        (**self).complete(choice, prompt)
    }
}

/// One line of a script file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub respond: String,
    #[serde(default)]
    pub once: bool,
}

impl ScriptedRule {
    pub fn new(pattern: impl Into<String>, respond: impl Into<String>) -> Self {
        Self { pattern: pattern.into(), respond: respond.into(), once: false }
    }

    /// A pattern that starts with `^` or ends with `$` is an anchored glob
    /// where `*` matches any run of characters. Anything else is a plain
    /// substring.
    pub fn matches(&self, text: &str) -> bool {
        let p = self.pattern.as_str();
        let head = p.starts_with('^');
        let tail = p.ends_with('$') && p.len() > usize::from(head);
        if !head && !tail {
            return text.contains(p);
        }
        let body = &p[usize::from(head)..p.len() - usize::from(tail)];
        glob_match(body, text, head, tail)
    }
}

/// Matches `pattern` (with `*` wildcards) against `text`. An unanchored side
/// behaves as if the pattern had a `*` there.
fn glob_match(pattern: &str, text: &str, anchor_start: bool, anchor_end: bool) -> bool {
    let mut parts: Vec<&str> = pattern.split('*').collect();
    if !anchor_start {
        parts.insert(0, "");
    }
    if !anchor_end {
        parts.push("");
    }
    // A single part means no wildcard at all: exact match.
    if parts.len() == 1 {
        return text == parts[0];
    }
    let first = parts[0];
    let last = parts[parts.len() - 1];
    if text.len() < first.len() + last.len() || !text.starts_with(first) || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(at) => rest = &rest[at + mid.len()..],
            None => return false,
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScriptError {
    #[error("malformed scripted rule on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}

pub fn load_rules(source: &str) -> Result<Vec<ScriptedRule>, ScriptError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| ScriptError::MalformedRecord { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

/// First-match rule table. Rules marked `once` retire after firing. When no
/// rule matches the optional fallback answers instead.
pub struct ScriptedBackend {
    rules: Vec<(ScriptedRule, AtomicBool)>,
    fallback: Option<Arc<dyn Completion>>,
}

impl core::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("rules", &self.rules.len())
            .field("fallback", &self.fallback.is_some())
            .finish()
    }
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        Self { rules: rules.into_iter().map(|r| (r, AtomicBool::new(false))).collect(), fallback: None }
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn Completion>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn from_jsonl(source: &str) -> Result<Self, ScriptError> {
        load_rules(source).map(Self::new)
    }

    /// Re-arms every `once` rule.
    pub fn reset(&self) {
        for (_, used) in &self.rules {
            used.store(false, Ordering::SeqCst);
        }
    }
}

impl Completion for ScriptedBackend {
    fn complete(&self, choice: &ModelChoice, prompt: &PromptBundle) -> Result<String, GatewayError> {
        let text = prompt.concatenated();
        for (rule, used) in &self.rules {
            if !rule.matches(&text) {
                continue;
            }
            if rule.once && used.swap(true, Ordering::SeqCst) {
                continue;
            }
            return Ok(rule.respond.clone());
        }
        match &self.fallback {
            Some(f) => f.complete(choice, prompt),
            None => Err(GatewayError::NoRuleMatched),
        }
    }
}

/// Sends each call to the backend registered under the choice's endpoint key.
#[derive(Clone, Default)]
pub struct BackendRouter {
    backends: BTreeMap<String, Arc<dyn Completion>>,
}

impl core::fmt::Debug for BackendRouter {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_list().entries(self.backends.keys()).finish()
    }
}

impl BackendRouter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, endpoint_key: impl Into<String>, backend: Arc<dyn Completion>) {
        self.backends.insert(endpoint_key.into(), backend);
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

impl Completion for BackendRouter {
    fn complete(&self, choice: &ModelChoice, prompt: &PromptBundle) -> Result<String, GatewayError> {
        self.backends
            .get(&choice.endpoint_key)
            .ok_or_else(|| GatewayError::MissingConfig(choice.endpoint_key.to_string()))?
            .complete(choice, prompt)
    }
}
