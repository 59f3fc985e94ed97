//! Transport-independent service: sessions, turns, order actions, reload
//! and export. The HTTP layer is a thin wrapper around [`Service`].

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{FixedOffset, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use ridechat_core::dialog::ReplierKind;
use ridechat_core::engine::{apply_session_action, Assistant, EngineError};
use ridechat_core::model::{ConversationGoal, Coord, DialogSession, Poi, TripOrder};
use ridechat_core::prompt::PromptSet;
use ridechat_core::timefmt;

use crate::config::{ConfigError, ServiceConfig};
use crate::export::{build_instruction_sets, InstructionSets};
use crate::store::{self, ActionKind, LogRecord, SessionStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("a turn is already in progress for session `{0}`")]
    Busy(String),
    #[error("{0}")]
    Conflict(String),
    /// The turn completed in degraded form; the reply carries the fallback.
    #[error("model gateway failure: {message}")]
    Gateway { message: String, reply: Box<TurnReply> },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub device: Option<Coord>,
    #[serde(default)]
    pub created_at: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnRequest {
    pub text: String,
    #[serde(default)]
    pub client_time: Option<String>,
    /// Only used when the turn creates the session.
    #[serde(default)]
    pub device: Option<Coord>,
}

/// What the chat client renders after a turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnReply {
    pub session_id: String,
    pub round: u32,
    pub response: String,
    pub order: Option<TripOrder>,
    pub candidates: Option<Vec<Poi>>,
    pub replier: ReplierKind,
    pub goal: ConversationGoal,
    pub outcome: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReloadSummary {
    pub endpoints: Vec<String>,
    pub pois: usize,
    pub kb_entries: usize,
}

pub struct Service {
    store: SessionStore,
    assistant: RwLock<Arc<Assistant>>,
    prompts: RwLock<PromptSet>,
    config_path: Option<PathBuf>,
    offset: FixedOffset,
    next_id: AtomicU64,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("store", &self.store).field("config", &self.config_path).finish()
    }
}

impl Service {
    pub fn new(assistant: Assistant, store: SessionStore, offset: FixedOffset) -> Self {
        let prompts = assistant.planner.prompts.clone();
        Self {
            store,
            assistant: RwLock::new(Arc::new(assistant)),
            prompts: RwLock::new(prompts),
            config_path: None,
            offset,
            next_id: AtomicU64::new(1),
        }
    }

    /// Loads the config, its data files and the dialog log.
    pub fn from_config_file(path: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let path = path.into();
        let cfg = ServiceConfig::load(&path)?;
        let resources = cfg.load_resources()?;
        let store = SessionStore::open(cfg.log_path())?;
        let mut s = Self::new(resources.assistant(), store, cfg.offset()?);
        s.config_path = Some(path);
        Ok(s)
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn assistant(&self) -> Arc<Assistant> {
        self.assistant.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn now(&self) -> NaiveDateTime {
        Utc::now().with_timezone(&self.offset).naive_local().with_nanosecond(0).unwrap_or_default()
    }

    fn time_or_now(&self, text: Option<&str>) -> Result<NaiveDateTime, ServiceError> {
        match text {
            None => Ok(self.now()),
            Some(t) => timefmt::parse(t)
                .ok_or_else(|| ServiceError::BadRequest(format!("bad time `{t}`, expected {}", timefmt::FORMAT))),
        }
    }

    pub fn create_session(&self, req: CreateSession) -> Result<DialogSession, ServiceError> {
        let created_at = self.time_or_now(req.created_at.as_deref())?;
        if req.device.is_some_and(|d| !d.in_range()) {
            return Err(ServiceError::BadRequest("device coordinate out of range".into()));
        }
        let id = match req.session_id {
            Some(id) if id.trim().is_empty() => return Err(ServiceError::BadRequest("empty session id".into())),
            Some(id) => id,
            None => self.fresh_id(),
        };
        match self.store.create(DialogSession::new(id, created_at, req.device)) {
            Ok(cell) => Ok(cell.snapshot()),
            Err(StoreError::Duplicate(id)) => Err(ServiceError::Conflict(format!("session `{id}` already exists"))),
            Err(e) => Err(e.into()),
        }
    }

    fn fresh_id(&self) -> String {
        loop {
            let n = self.next_id.fetch_add(1, Ordering::SeqCst);
            let id = format!("s{}-{n}", Utc::now().timestamp_millis());
            if self.store.get(&id).is_none() {
                return id;
            }
        }
    }

    pub fn session(&self, id: &str) -> Result<DialogSession, ServiceError> {
        self.store.get(id).map(|c| c.snapshot()).ok_or_else(|| not_found_session(id))
    }

    /// Runs one turn. The session is created on first use.
    pub fn handle_turn(&self, id: &str, req: &TurnRequest) -> Result<TurnReply, ServiceError> {
        let text = req.text.trim();
        if text.is_empty() {
            return Err(ServiceError::BadRequest("empty text".into()));
        }
        let now = self.time_or_now(req.client_time.as_deref())?;
        let cell = match self.store.get(id) {
            Some(c) => c,
            None => match self.store.create(DialogSession::new(id, now, req.device)) {
                Ok(c) => c,
                Err(StoreError::Duplicate(_)) => self.store.get(id).ok_or_else(|| not_found_session(id))?,
                Err(e) => return Err(e.into()),
            },
        };
        let mut guard = cell.try_begin().ok_or_else(|| ServiceError::Busy(id.into()))?;
        let assistant = self.assistant();
        let mut working = guard.session.clone();
        let out = assistant.handle_turn(&mut working, text, now).map_err(|e| match e {
            EngineError::EmptyQuery => ServiceError::BadRequest("empty text".into()),
            other => ServiceError::Internal(other.to_string()),
        })?;
        self.store.append(&LogRecord::Turn { session_id: id.into(), record: Box::new(out.record.clone()) })?;
        *guard.session = working;
        let r = &out.record;
        let reply = TurnReply {
            session_id: id.into(),
            round: r.user.round_id,
            response: r.assistant.text.clone(),
            order: guard.session.current_order.clone(),
            candidates: r.pending.as_ref().map(|p| p.candidates.clone()),
            replier: r.replier,
            goal: r.goal,
            outcome: r.outcome.name().into(),
        };
        match out.gateway_failure {
            Some(message) => Err(ServiceError::Gateway { message, reply: Box::new(reply) }),
            None => Ok(reply),
        }
    }

    pub fn order_action(
        &self,
        id: &str,
        order_id: &str,
        action: ActionKind,
        at: Option<&str>,
    ) -> Result<TripOrder, ServiceError> {
        let at = self.time_or_now(at)?;
        let cell = self.store.get(id).ok_or_else(|| not_found_session(id))?;
        let mut guard = cell.try_begin().ok_or_else(|| ServiceError::Busy(id.into()))?;
        let mut working = guard.session.clone();
        let order = apply_session_action(&mut working, order_id, &action.action()).map_err(|e| match e {
            EngineError::UnknownOrder(_) => ServiceError::NotFound(e.to_string()),
            other => ServiceError::Conflict(other.to_string()),
        })?;
        self.store.append(&LogRecord::OrderAction { session_id: id.into(), order_id: order_id.into(), action, at })?;
        *guard.session = working;
        Ok(order)
    }

    /// Re-reads the config file and swaps in freshly built backends,
    /// prompts, POIs and knowledge base. Sessions are untouched.
    pub fn reload(&self) -> Result<ReloadSummary, ServiceError> {
        let path =
            self.config_path.as_ref().ok_or_else(|| ServiceError::Conflict("service has no config file".into()))?;
        let cfg = ServiceConfig::load(path)?;
        let resources = cfg.load_resources()?;
        let summary = ReloadSummary {
            endpoints: resources.backends.keys().map(str::to_string).collect(),
            pois: resources.db.len(),
            kb_entries: resources.kb.len(),
        };
        *self.prompts.write().unwrap_or_else(|p| p.into_inner()) = resources.prompts.clone();
        *self.assistant.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(resources.assistant());
        Ok(summary)
    }

    /// Instruction sets built from turns logged in `[from, to]`.
    pub fn export(&self, from: NaiveDateTime, to: NaiveDateTime) -> Result<InstructionSets, ServiceError> {
        let replayed = store::replay(self.store.path())?;
        let prompts = self.prompts.read().unwrap_or_else(|p| p.into_inner()).clone();
        Ok(build_instruction_sets(&replayed.records, from, to, &prompts)?)
    }
}

fn not_found_session(id: &str) -> ServiceError {
    ServiceError::NotFound(format!("no session `{id}`"))
}
