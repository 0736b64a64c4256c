//! Scripted multi-user sessions, used for replay checks.
//!
//! Script lines:
//!
//! ```text
//! session <user>                 open a session owned by <user>
//! ask <text>                     user message in the current session
//! comment <n> <seq> <text>       the current user comments on event <seq> of
//!                                the n-th session of the script (1-based)
//! ```
//!
//! Blank lines and `#` lines are ignored.

use std::sync::atomic::{AtomicI64, Ordering};

use cbi_core::{ChatService, EventRef, SessionError};
use chrono::{DateTime, TimeZone, Utc};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("script line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("script line {line}: {source}")]
    Session { line: usize, source: SessionError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Session { user: String },
    Ask { text: String },
    Comment { session: usize, seq: u64, text: String },
}

pub fn parse_script(text: &str) -> Result<Vec<(usize, Step)>, ScenarioError> {
    let mut out = Vec::new();
    let mut opened = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let syntax = |msg: &str| ScenarioError::Syntax {
            line,
            msg: msg.to_string(),
        };
        let (word, rest) = l.split_once(' ').unwrap_or((l, ""));
        let step = match word {
            "session" if !rest.trim().is_empty() => {
                opened += 1;
                Step::Session {
                    user: rest.trim().to_string(),
                }
            }
            "ask" if opened == 0 => return Err(syntax("ask before any session")),
            "ask" if !rest.trim().is_empty() => Step::Ask {
                text: rest.trim().to_string(),
            },
            "comment" => {
                let mut parts = rest.splitn(3, ' ');
                let n = parts.next().and_then(|p| p.parse::<usize>().ok());
                let seq = parts.next().and_then(|p| p.parse::<u64>().ok());
                let body = parts.next().map(str::trim).unwrap_or("");
                match (n, seq) {
                    (Some(n), Some(seq)) if n >= 1 && n <= opened && !body.is_empty() => Step::Comment {
                        session: n,
                        seq,
                        text: body.to_string(),
                    },
                    _ => return Err(syntax("expected comment <session> <seq> <text>")),
                }
            }
            _ => return Err(syntax("expected session, ask or comment")),
        };
        out.push((line, step));
    }
    Ok(out)
}

/// Runs a script; returns the created session ids in script order.
pub fn run_script(service: &ChatService, steps: &[(usize, Step)]) -> Result<Vec<String>, ScenarioError> {
    let mut sessions: Vec<(String, String)> = Vec::new();
    for (line, step) in steps {
        let line = *line;
        let wrap = |source| ScenarioError::Session { line, source };
        match step {
            Step::Session { user } => {
                let s = service.store.create_session(user).map_err(wrap)?;
                sessions.push((s.session, user.clone()));
            }
            Step::Ask { text } => {
                let (id, user) = sessions.last().expect("parser checks for an open session");
                service.send(id, user, text, None).map_err(wrap)?;
            }
            Step::Comment { session, seq, text } => {
                let (_, user) = sessions.last().expect("parser checks for an open session");
                let target = sessions[session - 1].0.clone();
                let at = EventRef {
                    session: target.clone(),
                    seq: *seq,
                };
                service.store.comment(&target, user, text, Some(at)).map_err(wrap)?;
            }
        }
    }
    Ok(sessions.into_iter().map(|(id, _)| id).collect())
}

/// Deterministic clock: `start`, then one second later on every call.
pub fn stepping_clock(start: DateTime<Utc>) -> impl Fn() -> DateTime<Utc> + Send + Sync + 'static {
    let tick = AtomicI64::new(0);
    move || start + chrono::Duration::seconds(tick.fetch_add(1, Ordering::SeqCst))
}

/// Start instant used for committed scenario logs.
pub fn scenario_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).single().expect("valid instant")
}
