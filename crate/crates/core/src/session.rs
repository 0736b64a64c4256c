//! Append-only JSONL session log with an in-memory index.
//!
//! One record per line. An append is acknowledged only after the line has
//! been written and synced. On open, an unparseable final line (a write
//! torn by a crash) is cut off; a bad line anywhere else is an error.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::matcher::{QueryResolution, UserProfile};

pub const RECORD_VERSION: u32 = 1;
pub const TITLE_CHARS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionStarted,
    UserQuery,
    Resolution,
    Execution,
    AssistantTurn,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub v: u32,
    pub session: String,
    pub seq: u64,
    #[serde(with = "rfc3339")]
    pub ts: DateTime<Utc>,
    pub actor: String,
    pub kind: EventKind,
    pub payload: Value,
}

mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Address of one event, used as a comment target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRef {
    pub session: String,
    pub seq: u64,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log line {line} is corrupt: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("stale sequence for {session}: expected {expected}, got {got}")]
    StaleSequence {
        session: String,
        expected: u64,
        got: u64,
    },
    #[error("event {}#{} does not exist", .0.session, .0.seq)]
    DanglingReference(EventRef),
    #[error("record encoding: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub owner: String,
    #[serde(with = "rfc3339")]
    pub started: DateTime<Utc>,
    pub title: String,
    pub query_count: usize,
    pub comment_count: usize,
    pub events: usize,
}

#[derive(Debug, Clone)]
struct SessionState {
    user: String,
    started: DateTime<Utc>,
    title: String,
    queries: usize,
    comments: usize,
    events: Vec<EventRecord>,
}

impl SessionState {
    fn summary(&self, id: &str) -> SessionSummary {
        SessionSummary {
            session: id.to_string(),
            owner: self.user.clone(),
            started: self.started,
            title: self.title.clone(),
            query_count: self.queries,
            comment_count: self.comments,
            events: self.events.len(),
        }
    }

    fn apply(&mut self, rec: EventRecord) {
        if rec.kind == EventKind::UserQuery {
            self.queries += 1;
            if self.title.is_empty() {
                self.title = title_of(payload_text(&rec.payload));
            }
        }
        if rec.kind == EventKind::Comment {
            self.comments += 1;
        }
        self.events.push(rec);
    }
}

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct SessionStore {
    path: PathBuf,
    file: Mutex<File>,
    index: RwLock<BTreeMap<String, SessionState>>,
    clock: Clock,
    truncated: u64,
}

impl std::fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionStore").field("path", &self.path).finish()
    }
}

impl SessionStore {
    /// Opens (or creates) the log and replays it into memory.
    pub fn open(path: impl AsRef<Path>) -> Result<SessionStore, SessionError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;

        let mut index: BTreeMap<String, SessionState> = BTreeMap::new();
        let mut good_len = 0u64;
        let mut pending: Option<(usize, String)> = None;
        {
            let mut reader = BufReader::new(&mut file);
            reader.seek(SeekFrom::Start(0))?;
            let mut line = String::new();
            let mut lineno = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                if let Some((at, msg)) = pending.take() {
                    return Err(SessionError::Corrupt { line: at, msg });
                }
                let complete = line.ends_with('\n');
                if line.trim().is_empty() && complete {
                    good_len += n as u64;
                    continue;
                }
                match serde_json::from_str::<EventRecord>(line.trim_end()) {
                    Ok(rec) if complete => {
                        replay(&mut index, rec, lineno)?;
                        good_len += n as u64;
                    }
                    Ok(_) => pending = Some((lineno, "missing line terminator".into())),
                    Err(e) => pending = Some((lineno, e.to_string())),
                }
            }
        }
        let total = file.metadata()?.len();
        let truncated = total - good_len;
        if truncated > 0 {
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        Ok(SessionStore {
            path,
            file: Mutex::new(file),
            index: RwLock::new(index),
            clock: Arc::new(Utc::now),
            truncated,
        })
    }

    /// Replaces the timestamp source.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> SessionStore {
        self.clock = Arc::new(clock);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Bytes of a torn final record cut off on open.
    pub fn truncated_bytes(&self) -> u64 {
        self.truncated
    }

    /// Starts a session and logs its `session_started` event.
    pub fn create_session(&self, user: &str) -> Result<SessionSummary, SessionError> {
        let mut file = self.file.lock().expect("log lock");
        let id = {
            let index = self.index.read().expect("index lock");
            next_id(&index)
        };
        let rec = self.record(&id, 0, user, EventKind::SessionStarted, serde_json::json!({ "user": user }));
        write_synced(&mut file, &rec)?;
        let mut index = self.index.write().expect("index lock");
        replay(&mut index, rec, 0).expect("fresh session");
        Ok(index[&id].summary(&id))
    }

    /// Appends at an explicit sequence number. Fails with `StaleSequence`
    /// when another writer got there first.
    pub fn append(
        &self,
        session: &str,
        seq: u64,
        actor: &str,
        kind: EventKind,
        payload: Value,
    ) -> Result<EventRecord, SessionError> {
        let mut file = self.file.lock().expect("log lock");
        let expected = self.next_seq(session)?;
        if seq != expected {
            return Err(SessionError::StaleSequence {
                session: session.to_string(),
                expected,
                got: seq,
            });
        }
        self.write(&mut file, session, seq, actor, kind, payload)
    }

    /// Appends at the next free sequence number.
    pub fn append_next(
        &self,
        session: &str,
        actor: &str,
        kind: EventKind,
        payload: Value,
    ) -> Result<EventRecord, SessionError> {
        let mut file = self.file.lock().expect("log lock");
        let seq = self.next_seq(session)?;
        self.write(&mut file, session, seq, actor, kind, payload)
    }

    /// Adds a comment, optionally attached to an existing event.
    pub fn comment(
        &self,
        session: &str,
        user: &str,
        text: &str,
        target: Option<EventRef>,
    ) -> Result<EventRecord, SessionError> {
        let mut file = self.file.lock().expect("log lock");
        let seq = self.next_seq(session)?;
        if let Some(t) = &target {
            let index = self.index.read().expect("index lock");
            let exists = index
                .get(&t.session)
                .is_some_and(|s| s.events.iter().any(|e| e.seq == t.seq));
            if !exists {
                return Err(SessionError::DanglingReference(t.clone()));
            }
        }
        let payload = serde_json::json!({ "text": text, "target": target });
        self.write(&mut file, session, seq, user, EventKind::Comment, payload)
    }

    pub fn events(&self, session: &str, since: Option<u64>) -> Result<Vec<EventRecord>, SessionError> {
        let index = self.index.read().expect("index lock");
        let state = index
            .get(session)
            .ok_or_else(|| SessionError::SessionNotFound(session.to_string()))?;
        Ok(state
            .events
            .iter()
            .filter(|e| since.is_none_or(|s| e.seq > s))
            .cloned()
            .collect())
    }

    pub fn summary(&self, session: &str) -> Result<SessionSummary, SessionError> {
        let index = self.index.read().expect("index lock");
        index
            .get(session)
            .map(|s| s.summary(session))
            .ok_or_else(|| SessionError::SessionNotFound(session.to_string()))
    }

    /// Sessions, newest first. `filter` is a case-insensitive substring of
    /// the title or any user query; `user` restricts to one owner.
    pub fn list(&self, filter: Option<&str>, user: Option<&str>) -> Vec<SessionSummary> {
        let index = self.index.read().expect("index lock");
        let needle = filter.map(str::to_lowercase).filter(|f| !f.is_empty());
        let mut out: Vec<SessionSummary> = index
            .iter()
            .filter(|(_, s)| user.is_none_or(|u| s.user == u))
            .filter(|(_, s)| match &needle {
                None => true,
                Some(n) => {
                    s.title.to_lowercase().contains(n)
                        || s.events.iter().any(|e| {
                            e.kind == EventKind::UserQuery
                                && payload_text(&e.payload).to_lowercase().contains(n)
                        })
                }
            })
            .map(|(id, s)| s.summary(id))
            .collect();
        out.sort_by(|a, b| b.started.cmp(&a.started).then_with(|| b.session.cmp(&a.session)));
        out
    }

    /// Usage counts over all complete resolutions logged for `user`.
    pub fn profile(&self, user: &str) -> UserProfile {
        let index = self.index.read().expect("index lock");
        let mut profile = UserProfile::default();
        for s in index.values().filter(|s| s.user == user) {
            for e in s.events.iter().filter(|e| e.kind == EventKind::Resolution) {
                if let Ok(res) = serde_json::from_value::<QueryResolution>(e.payload.clone()) {
                    profile.record(&res);
                }
            }
        }
        profile
    }

    fn next_seq(&self, session: &str) -> Result<u64, SessionError> {
        let index = self.index.read().expect("index lock");
        index
            .get(session)
            .map(|s| s.events.last().map_or(0, |e| e.seq + 1))
            .ok_or_else(|| SessionError::SessionNotFound(session.to_string()))
    }

    fn record(&self, session: &str, seq: u64, actor: &str, kind: EventKind, payload: Value) -> EventRecord {
        EventRecord {
            v: RECORD_VERSION,
            session: session.to_string(),
            seq,
            ts: (self.clock)(),
            actor: actor.to_string(),
            kind,
            payload,
        }
    }

    fn write(
        &self,
        file: &mut File,
        session: &str,
        seq: u64,
        actor: &str,
        kind: EventKind,
        payload: Value,
    ) -> Result<EventRecord, SessionError> {
        let rec = self.record(session, seq, actor, kind, payload);
        write_synced(file, &rec)?;
        let mut index = self.index.write().expect("index lock");
        index
            .get_mut(session)
            .expect("checked under the log lock")
            .apply(rec.clone());
        Ok(rec)
    }
}

fn write_synced(file: &mut File, rec: &EventRecord) -> Result<(), SessionError> {
    let mut line = serde_json::to_string(rec)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()?;
    Ok(())
}

fn replay(
    index: &mut BTreeMap<String, SessionState>,
    rec: EventRecord,
    line: usize,
) -> Result<(), SessionError> {
    if rec.kind == EventKind::SessionStarted {
        let user = rec.payload.get("user").and_then(Value::as_str).unwrap_or(&rec.actor).to_string();
        let state = SessionState {
            user,
            started: rec.ts,
            title: String::new(),
            queries: 0,
            comments: 0,
            events: vec![rec.clone()],
        };
        index.insert(rec.session, state);
        return Ok(());
    }
    let state = index.get_mut(&rec.session).ok_or_else(|| SessionError::Corrupt {
        line,
        msg: format!("event for unknown session {}", rec.session),
    })?;
    let expected = state.events.last().map_or(0, |e| e.seq + 1);
    if rec.seq != expected {
        return Err(SessionError::Corrupt {
            line,
            msg: format!("sequence {} where {expected} was expected", rec.seq),
        });
    }
    state.apply(rec);
    Ok(())
}

fn next_id(index: &BTreeMap<String, SessionState>) -> String {
    let n = index
        .keys()
        .filter_map(|k| k.strip_prefix('s').and_then(|d| d.parse::<u64>().ok()))
        .max()
        .map_or(1, |m| m + 1);
    format!("s{n:06}")
}

fn payload_text(payload: &Value) -> &str {
    payload.get("text").and_then(Value::as_str).unwrap_or("")
}

fn title_of(text: &str) -> String {
    let text = text.trim();
    if text.chars().count() <= TITLE_CHARS {
        return text.to_string();
    }
    let cut: String = text.chars().take(TITLE_CHARS - 3).collect();
    format!("{}...", cut.trim_end())
}

/// Formats a timestamp the way records store it.
pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::sync::atomic::{AtomicI64, Ordering};

    fn ticking() -> impl Fn() -> DateTime<Utc> + Send + Sync + 'static {
        let n = AtomicI64::new(0);
        move || Utc.timestamp_opt(1_700_000_000 + n.fetch_add(1, Ordering::SeqCst), 0).unwrap()
    }

    fn store(dir: &tempfile::TempDir) -> SessionStore {
        SessionStore::open(dir.path().join("log.jsonl")).unwrap().with_clock(ticking())
    }

    fn q(text: &str) -> Value {
        serde_json::json!({ "text": text })
    }

    #[test]
    fn create_append_replay() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let s = store(&dir);
            let id = s.create_session("ana").unwrap().session;
            s.append(&id, 1, "ana", EventKind::UserQuery, q("What weather has the most accidents?")).unwrap();
            s.append_next(&id, "assistant", EventKind::AssistantTurn, q("Normal")).unwrap();
            id
        };
        let s = store(&dir);
        let ev = s.events(&id, None).unwrap();
        assert_eq!(ev.iter().map(|e| e.seq).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(s.summary(&id).unwrap().title, "What weather has the most accidents?");
        assert_eq!(s.summary(&id).unwrap().query_count, 1);
        assert_eq!(s.events(&id, Some(0)).unwrap().len(), 2);
    }

    #[test]
    fn stale_sequence_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(&dir);
        let id = s.create_session("ana").unwrap().session;
        s.append(&id, 1, "ana", EventKind::UserQuery, q("a")).unwrap();
        let err = s.append(&id, 1, "ana", EventKind::UserQuery, q("b")).unwrap_err();
        assert!(matches!(err, SessionError::StaleSequence { expected: 2, got: 1, .. }));
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let id = {
            let s = store(&dir);
            let id = s.create_session("ana").unwrap().session;
            s.append_next(&id, "ana", EventKind::UserQuery, q("a")).unwrap();
            id
        };
        let good = std::fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"v":1,"session":"s000001","seq":2,"ts":"20"#).unwrap();
        drop(f);
        let s = store(&dir);
        assert!(s.truncated_bytes() > 0);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), good);
        assert_eq!(s.events(&id, None).unwrap().len(), 2);
        s.append_next(&id, "ana", EventKind::UserQuery, q("b")).unwrap();
        drop(s);
        assert_eq!(store(&dir).events(&id, None).unwrap().len(), 3);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let s = store(&dir);
            s.create_session("ana").unwrap();
        }
        let body = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, format!("garbage\n{body}")).unwrap();
        assert!(matches!(SessionStore::open(&path), Err(SessionError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn comments_must_target_existing_events() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(&dir);
        let id = s.create_session("ana").unwrap().session;
        let ok = s.comment(&id, "bo", "nice", Some(EventRef { session: id.clone(), seq: 0 }));
        assert!(ok.is_ok());
        let err = s
            .comment(&id, "bo", "huh", Some(EventRef { session: id.clone(), seq: 99 }))
            .unwrap_err();
        assert!(matches!(err, SessionError::DanglingReference(_)));
        assert!(matches!(s.comment("nope", "bo", "x", None), Err(SessionError::SessionNotFound(_))));
    }

    #[test]
    fn listing_sorts_newest_first_and_filters() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(&dir);
        let a = s.create_session("ana").unwrap().session;
        s.append_next(&a, "ana", EventKind::UserQuery, q("weather question")).unwrap();
        let b = s.create_session("bo").unwrap().session;
        s.append_next(&b, "bo", EventKind::UserQuery, q("road types")).unwrap();
        let all: Vec<_> = s.list(None, None).into_iter().map(|x| x.session).collect();
        assert_eq!(all, [b.clone(), a.clone()]);
        assert_eq!(s.list(Some("WEATHER"), None)[0].session, a);
        assert_eq!(s.list(None, Some("bo"))[0].session, b);
        assert!(s.list(Some("zzz"), None).is_empty());
    }

    #[test]
    fn long_titles_are_cut() {
        let t = title_of(&"word ".repeat(30));
        assert!(t.chars().count() <= TITLE_CHARS);
        assert!(t.ends_with("..."));
        assert_eq!(title_of("short"), "short");
    }

    #[test]
    fn record_shape() {
        let rec = EventRecord {
            v: 1,
            session: "s000001".into(),
            seq: 3,
            ts: Utc.timestamp_opt(0, 0).unwrap(),
            actor: "ana".into(),
            kind: EventKind::UserQuery,
            payload: q("hi"),
        };
        assert_eq!(
            serde_json::to_string(&rec).unwrap(),
            r#"{"v":1,"session":"s000001","seq":3,"ts":"1970-01-01T00:00:00.000Z","actor":"ana","kind":"user_query","payload":{"text":"hi"}}"#
        );
    }
}
