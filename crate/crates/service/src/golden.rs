//! Pinned dialogs with expected outcomes, replayed through any front end.
//!
//! A golden file holds one [`GoldenSession`] per line: the steps a
//! passenger takes (utterances and order-card button presses) and the
//! per-round truths used for scoring.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use ridechat_core::engine::{apply_session_action, Assistant};
use ridechat_core::eval::{LabeledSession, RoundTruth};
use ridechat_core::model::{Coord, DialogSession};
use ridechat_core::timefmt;

use crate::client::ApiClient;
use crate::service::{CreateSession, Service, ServiceError, TurnRequest};
use crate::store::ActionKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub say: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub press: Option<ActionKind>,
    /// Defaults to the session start plus one minute per preceding step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenSession {
    pub session_id: String,
    #[serde(with = "timefmt")]
    pub created_at: NaiveDateTime,
    #[serde(default)]
    pub device: Option<Coord>,
    pub steps: Vec<GoldenStep>,
    #[serde(default)]
    pub truths: Vec<RoundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl GoldenSession {
    pub fn step_time(&self, i: usize) -> Result<NaiveDateTime, String> {
        match &self.steps[i].at {
            Some(t) => timefmt::parse(t).ok_or_else(|| format!("{}: bad step time `{t}`", self.session_id)),
            None => Ok(self.created_at + chrono::Duration::minutes(i as i64)),
        }
    }
}

pub fn load_golden(text: &str) -> Result<Vec<GoldenSession>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("golden line {}: {e}", i + 1)))
        .collect()
}

/// Anything golden sessions can be played against.
pub trait Frontend {
    fn create(&self, id: &str, created_at: NaiveDateTime, device: Option<Coord>) -> Result<(), String>;
    fn say(&self, id: &str, text: &str, at: NaiveDateTime) -> Result<(), String>;
    fn press(&self, id: &str, action: ActionKind, at: NaiveDateTime) -> Result<(), String>;
    fn fetch(&self, id: &str) -> Result<DialogSession, String>;
}

pub fn play(front: &dyn Frontend, g: &GoldenSession) -> Result<LabeledSession, String> {
    front.create(&g.session_id, g.created_at, g.device)?;
    for (i, step) in g.steps.iter().enumerate() {
        let at = g.step_time(i)?;
        match (&step.say, step.press) {
            (Some(text), None) => front.say(&g.session_id, text, at)?,
            (None, Some(action)) => front.press(&g.session_id, action, at)?,
            _ => return Err(format!("{} step {}: exactly one of `say` and `press` is required", g.session_id, i + 1)),
        }
    }
    Ok(LabeledSession { session: front.fetch(&g.session_id)?, truths: g.truths.clone() })
}

pub fn run_golden(front: &dyn Frontend, golden: &[GoldenSession]) -> Result<Vec<LabeledSession>, String> {
    golden.iter().map(|g| play(front, g)).collect()
}

fn current_order_id(s: &DialogSession) -> Result<String, String> {
    s.current_order.as_ref().map(|o| o.order_id.clone()).ok_or_else(|| format!("{}: no order to act on", s.session_id))
}

impl Frontend for Service {
    fn create(&self, id: &str, created_at: NaiveDateTime, device: Option<Coord>) -> Result<(), String> {
        let req = CreateSession { session_id: Some(id.into()), device, created_at: Some(timefmt::format(&created_at)) };
        self.create_session(req).map(drop).map_err(|e| e.to_string())
    }

    fn say(&self, id: &str, text: &str, at: NaiveDateTime) -> Result<(), String> {
        let req = TurnRequest { text: text.into(), client_time: Some(timefmt::format(&at)), device: None };
        match self.handle_turn(id, &req) {
            Ok(_) => Ok(()),
            Err(ServiceError::Gateway { .. }) => Ok(()),
            Err(e) => Err(e.to_string()),
        }
    }

    fn press(&self, id: &str, action: ActionKind, at: NaiveDateTime) -> Result<(), String> {
        let oid = current_order_id(&self.session(id).map_err(|e| e.to_string())?)?;
        self.order_action(id, &oid, action, Some(&timefmt::format(&at))).map(drop).map_err(|e| e.to_string())
    }

    fn fetch(&self, id: &str) -> Result<DialogSession, String> {
        self.session(id).map_err(|e| e.to_string())
    }
}

impl Frontend for ApiClient {
    fn create(&self, id: &str, created_at: NaiveDateTime, device: Option<Coord>) -> Result<(), String> {
        let body =
            serde_json::json!({ "session_id": id, "created_at": timefmt::format(&created_at), "device": device });
        expect_ok(self.post("/v1/session", &body)?)
    }

    fn say(&self, id: &str, text: &str, at: NaiveDateTime) -> Result<(), String> {
        let r = self.turn(id, text, Some(&timefmt::format(&at)))?;
        // A 500 still means the turn was logged with fallback text.
        if r.ok() || r.status == 500 {
            Ok(())
        } else {
            Err(format!("turn failed with {}: {}", r.status, r.raw))
        }
    }

    fn press(&self, id: &str, action: ActionKind, at: NaiveDateTime) -> Result<(), String> {
        let oid = current_order_id(&self.fetch(id)?)?;
        let name = match action {
            ActionKind::Confirm => "confirm",
            ActionKind::Cancel => "cancel",
        };
        expect_ok(self.order_action(id, &oid, name, Some(&timefmt::format(&at)))?)
    }

    fn fetch(&self, id: &str) -> Result<DialogSession, String> {
        let r = self.session(id)?;
        if !r.ok() {
            return Err(format!("GET session failed with {}: {}", r.status, r.raw));
        }
        serde_json::from_str(&r.raw).map_err(|e| e.to_string())
    }
}

fn expect_ok(r: crate::client::ApiResponse) -> Result<(), String> {
    if r.ok() {
        Ok(())
    } else {
        Err(format!("request failed with {}: {}", r.status, r.raw))
    }
}

/// Runs sessions straight against an assistant with no log, timing each
/// turn. Used by the benchmark.
pub struct Offline {
    pub assistant: Arc<Assistant>,
    sessions: Mutex<BTreeMap<String, DialogSession>>,
    pub latencies: Mutex<Vec<Duration>>,
    pub degraded: AtomicUsize,
}

impl Offline {
    pub fn new(assistant: Arc<Assistant>) -> Self {
        Self { assistant, sessions: Mutex::default(), latencies: Mutex::default(), degraded: AtomicUsize::new(0) }
    }

    fn with<T>(&self, id: &str, f: impl FnOnce(&mut DialogSession) -> Result<T, String>) -> Result<T, String> {
        let mut map = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let s = map.get_mut(id).ok_or_else(|| format!("no session `{id}`"))?;
        f(s)
    }
}

impl Frontend for Offline {
    fn create(&self, id: &str, created_at: NaiveDateTime, device: Option<Coord>) -> Result<(), String> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.into(), DialogSession::new(id, created_at, device));
        Ok(())
    }

    fn say(&self, id: &str, text: &str, at: NaiveDateTime) -> Result<(), String> {
        self.with(id, |s| {
            let t = Instant::now();
            let out = self.assistant.handle_turn(s, text, at).map_err(|e| e.to_string())?;
            self.latencies.lock().unwrap_or_else(|p| p.into_inner()).push(t.elapsed());
            if out.gateway_failure.is_some() {
                self.degraded.fetch_add(1, Ordering::SeqCst);
            }
            Ok(())
        })
    }

    fn press(&self, id: &str, action: ActionKind, _: NaiveDateTime) -> Result<(), String> {
        self.with(id, |s| {
            let oid = current_order_id(s)?;
            apply_session_action(s, &oid, &action.action()).map(drop).map_err(|e| e.to_string())
        })
    }

    fn fetch(&self, id: &str) -> Result<DialogSession, String> {
        self.with(id, |s| Ok(s.clone()))
    }
}
