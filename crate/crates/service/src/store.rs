//! Append-only dialog log with an in-memory session index.
//!
//! Each line of the log is one [`LogRecord`]. Opening a store replays the
//! whole file, so the index after a restart equals the index before it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use ridechat_core::engine::{apply_session_action, EngineError};
use ridechat_core::model::{Coord, DialogSession, SessionError, TurnRecord};
use ridechat_core::planner::OrderAction;
use ridechat_core::timefmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Confirm,
    Cancel,
}

impl ActionKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "confirm" => Some(Self::Confirm),
            "cancel" => Some(Self::Cancel),
            _ => None,
        }
    }

    pub fn action(self) -> OrderAction {
        match self {
            Self::Confirm => OrderAction::Confirm,
            Self::Cancel => OrderAction::Cancel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    SessionCreated {
        session_id: String,
        #[serde(with = "timefmt")]
        created_at: NaiveDateTime,
        #[serde(default)]
        device: Option<Coord>,
    },
    Turn {
        session_id: String,
        record: Box<TurnRecord>,
    },
    OrderAction {
        session_id: String,
        order_id: String,
        action: ActionKind,
        #[serde(with = "timefmt")]
        at: NaiveDateTime,
    },
}

impl LogRecord {
    pub fn session_id(&self) -> &str {
        match self {
            LogRecord::SessionCreated { session_id, .. }
            | LogRecord::Turn { session_id, .. }
            | LogRecord::OrderAction { session_id, .. } => session_id,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("session `{0}` already exists")]
    Duplicate(String),
    #[error("log refers to unknown session `{0}`")]
    UnknownSession(String),
    #[error("replaying session `{id}`: {message}")]
    Replay { id: String, message: String },
}

/// Applies one record to a session map. Live serving and replay share it.
pub fn apply(sessions: &mut BTreeMap<String, DialogSession>, rec: &LogRecord) -> Result<(), StoreError> {
    let replay = |id: &str, e: &dyn std::fmt::Display| StoreError::Replay { id: id.into(), message: e.to_string() };
    match rec {
        LogRecord::SessionCreated { session_id, created_at, device } => {
            if sessions.contains_key(session_id) {
                return Err(StoreError::Duplicate(session_id.clone()));
            }
            sessions.insert(session_id.clone(), DialogSession::new(session_id.clone(), *created_at, *device));
        }
        LogRecord::Turn { session_id, record } => {
            let s = sessions.get_mut(session_id).ok_or_else(|| StoreError::UnknownSession(session_id.clone()))?;
            s.append_turn((**record).clone()).map_err(|e: SessionError| replay(session_id, &e))?;
        }
        LogRecord::OrderAction { session_id, order_id, action, .. } => {
            let s = sessions.get_mut(session_id).ok_or_else(|| StoreError::UnknownSession(session_id.clone()))?;
            apply_session_action(s, order_id, &action.action()).map_err(|e: EngineError| replay(session_id, &e))?;
        }
    }
    Ok(())
}

/// Result of reading a log from disk.
#[derive(Debug, Default)]
pub struct Replayed {
    pub sessions: BTreeMap<String, DialogSession>,
    pub records: Vec<LogRecord>,
    /// A final line cut short by a crash, dropped during replay.
    pub torn_tail: bool,
    /// Bytes up to the end of the last complete record.
    pub valid_len: u64,
}

impl Replayed {
    pub fn turns(&self) -> u64 {
        self.records.iter().filter(|r| matches!(r, LogRecord::Turn { .. })).count() as u64
    }
}

pub fn replay(path: &Path) -> Result<Replayed, StoreError> {
    let mut out = Replayed::default();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            out.valid_len = offset as u64;
            continue;
        }
        let rec: LogRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(_) if offset == text.len() && !line.ends_with('\n') => {
                out.torn_tail = true;
                out.valid_len = start as u64;
                break;
            }
            Err(e) => return Err(StoreError::Corrupt { line: i + 1, message: e.to_string() }),
        };
        apply(&mut out.sessions, &rec)?;
        out.records.push(rec);
        out.valid_len = offset as u64;
    }
    Ok(out)
}

/// A session plus the flag that keeps turns on it serial.
#[derive(Debug)]
pub struct SessionCell {
    busy: AtomicBool,
    session: Mutex<DialogSession>,
}

/// Held while a turn or order action runs on a session.
pub struct TurnGuard<'a> {
    cell: &'a SessionCell,
    pub session: MutexGuard<'a, DialogSession>,
}

impl Drop for TurnGuard<'_> {
    fn drop(&mut self) {
        self.cell.busy.store(false, Ordering::SeqCst);
    }
}

impl SessionCell {
    fn new(s: DialogSession) -> Self {
        Self { busy: AtomicBool::new(false), session: Mutex::new(s) }
    }

    /// `None` when another turn is already running on this session.
    pub fn try_begin(&self) -> Option<TurnGuard<'_>> {
        if self.busy.swap(true, Ordering::SeqCst) {
            return None;
        }
        let session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        Some(TurnGuard { cell: self, session })
    }

    pub fn snapshot(&self) -> DialogSession {
        self.session.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

pub struct SessionStore {
    path: PathBuf,
    appender: Mutex<File>,
    sessions: RwLock<BTreeMap<String, Arc<SessionCell>>>,
    turns: AtomicU64,
}

impl std::fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionStore").field("path", &self.path).field("turns", &self.turn_count()).finish()
    }
}

impl SessionStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let replayed = replay(&path)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if replayed.torn_tail {
            file.set_len(replayed.valid_len)?;
        }
        let turns = replayed.turns();
        let sessions = replayed.sessions.into_iter().map(|(k, v)| (k, Arc::new(SessionCell::new(v)))).collect();
        Ok(Self { path, appender: Mutex::new(file), sessions: RwLock::new(sessions), turns: AtomicU64::new(turns) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rec: &LogRecord) -> Result<(), StoreError> {
        let mut line =
            serde_json::to_string(rec).map_err(|e| StoreError::Corrupt { line: 0, message: e.to_string() })?;
        line.push('\n');
        let mut f = self.appender.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())?;
        f.flush()?;
        if matches!(rec, LogRecord::Turn { .. }) {
            self.turns.fetch_add(1, Ordering::SeqCst);
        }
        Ok(())
    }

    /// Logs and indexes a new, empty session.
    pub fn create(&self, session: DialogSession) -> Result<Arc<SessionCell>, StoreError> {
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        if map.contains_key(&session.session_id) {
            return Err(StoreError::Duplicate(session.session_id));
        }
        self.append(&LogRecord::SessionCreated {
            session_id: session.session_id.clone(),
            created_at: session.created_at,
            device: session.device,
        })?;
        let cell = Arc::new(SessionCell::new(session.clone()));
        map.insert(session.session_id, cell.clone());
        Ok(cell)
    }

    pub fn get(&self, id: &str) -> Option<Arc<SessionCell>> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect()
    }

    /// Turn records written so far, including those replayed at open.
    pub fn turn_count(&self) -> u64 {
        self.turns.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ridechat_core::dialog::ReplierKind;
    use ridechat_core::model::{ConversationGoal, OrderState, TripOrder, Utterance};
    use ridechat_core::planner::OutcomeKind;

    fn dt(s: &str) -> NaiveDateTime {
        timefmt::parse(s).unwrap()
    }

    fn turn(round: u32, order: Option<TripOrder>) -> TurnRecord {
        let now = dt("2024-08-28 12:00:00");
        TurnRecord {
            user: Utterance::user(round, "hello", now),
            function_calls: vec![],
            tool_results: vec![],
            order_snapshot: order,
            pending: None,
            goal: ConversationGoal::ChitChat,
            outcome: OutcomeKind::NonOrderTurn { goal: ConversationGoal::ChitChat },
            replier: ReplierKind::KnowledgeEnhanced,
            retrieved: vec![],
            assistant: Utterance::assistant(round, "Hi! Where to?", now),
            ground_truth: None,
        }
    }

    fn planned() -> TripOrder {
        let mut o = TripOrder::draft("s-r1");
        o.state = OrderState::Planned;
        o
    }

    #[test]
    fn reopen_reconstructs_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let now = dt("2024-08-28 12:00:00");
        {
            let store = SessionStore::open(&path).unwrap();
            let cell = store.create(DialogSession::new("s", now, Some(Coord::new(1.0, 2.0)))).unwrap();
            let mut g = cell.try_begin().unwrap();
            let rec = turn(1, Some(planned()));
            store.append(&LogRecord::Turn { session_id: "s".into(), record: Box::new(rec.clone()) }).unwrap();
            g.session.append_turn(rec).unwrap();
            apply_session_action(&mut g.session, "s-r1", &OrderAction::Confirm).unwrap();
            store
                .append(&LogRecord::OrderAction {
                    session_id: "s".into(),
                    order_id: "s-r1".into(),
                    action: ActionKind::Confirm,
                    at: now,
                })
                .unwrap();
            assert!(matches!(store.create(DialogSession::new("s", now, None)), Err(StoreError::Duplicate(_))));
        }
        let live = {
            let mut s = DialogSession::new("s", now, Some(Coord::new(1.0, 2.0)));
            s.append_turn(turn(1, Some(planned()))).unwrap();
            apply_session_action(&mut s, "s-r1", &OrderAction::Confirm).unwrap();
            s
        };
        let store = SessionStore::open(&path).unwrap();
        assert_eq!(store.get("s").unwrap().snapshot(), live);
        assert_eq!(store.turn_count(), 1);
        assert_eq!(store.ids(), ["s"]);
    }

    #[test]
    fn busy_session_rejects_second_turn() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path().join("l")).unwrap();
        let cell = store.create(DialogSession::new("s", dt("2024-08-28 12:00:00"), None)).unwrap();
        let g = cell.try_begin().unwrap();
        assert!(cell.try_begin().is_none());
        drop(g);
        assert!(cell.try_begin().is_some());
    }

    #[test]
    fn torn_tail_is_dropped_and_corrupt_middle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l");
        let created = r#"{"type":"session_created","session_id":"a","created_at":"2024-08-28 12:00:00"}"#;
        std::fs::write(&path, format!("{created}\n{{\"type\":\"turn\",\"sess")).unwrap();
        let r = replay(&path).unwrap();
        assert!(r.torn_tail && r.sessions.contains_key("a"));
        let store = SessionStore::open(&path).unwrap();
        store.create(DialogSession::new("b", dt("2024-08-28 12:00:00"), None)).unwrap();
        drop(store);
        assert_eq!(SessionStore::open(&path).unwrap().ids(), ["a", "b"]);

        std::fs::write(&path, format!("garbage\n{created}\n")).unwrap();
        assert!(matches!(replay(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn records_for_unknown_sessions_are_rejected() {
        let mut map = BTreeMap::new();
        let rec = LogRecord::Turn { session_id: "x".into(), record: Box::new(turn(1, None)) };
        assert!(matches!(apply(&mut map, &rec), Err(StoreError::UnknownSession(_))));
    }
}
