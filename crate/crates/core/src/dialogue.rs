//! Turn handling: matching, clarification, follow-ups and execution, plus
//! the service that logs every turn to the session store.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::{ColumnRef, MetadataCatalog};
use crate::engine::{execute, ExecError, Execution, ResultValue};
use crate::matcher::{MatchStatus, Matcher, MissingSlot, QueryResolution, UserProfile};
use crate::nlg::{filter_phrase, render_answer};
use crate::registry::{bind, BoundCommand, BoundValue, Condition, Registry, SlotKind};
use crate::session::{EventKind, EventRecord, SessionError, SessionStore};
use crate::table::TableSet;

/// Clarifications asked again after the first one before giving up.
pub const MAX_CLARIFICATIONS: u32 = 2;
pub const MAX_SUGGESTIONS: usize = 3;

pub const EXAMPLE_QUESTIONS: [&str; 3] = [
    "What weather has the most accidents?",
    "Is the number of accidents per year decreasing?",
    "What is the distribution of sexes among the individuals affected?",
];

pub const ASSISTANT: &str = "assistant";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Answer,
    Clarification,
    NoMatch,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub kind: ReplyKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suggestions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultValue>,
}

/// A question waiting for a slot value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pending {
    pub resolution: QueryResolution,
    pub slot: String,
    pub attempts: u32,
}

/// The last executed command, kept for follow-ups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastCommand {
    pub command: String,
    pub bindings: BTreeMap<String, BoundValue>,
    #[serde(default)]
    pub conditions: Vec<Condition>,
    pub result: ResultValue,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<Pending>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_command: Option<LastCommand>,
}

impl DialogueState {
    /// State saved with the most recent assistant turn.
    pub fn from_events(events: &[EventRecord]) -> DialogueState {
        events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::AssistantTurn)
            .and_then(|e| e.payload.get("state"))
            .and_then(|s| serde_json::from_value(s.clone()).ok())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub reply: Reply,
    pub resolution: Option<QueryResolution>,
    pub execution: Option<Execution>,
}

/// Registry, catalog and data: everything needed to answer a question.
#[derive(Debug, Clone)]
pub struct Assistant {
    pub registry: Registry,
    pub catalog: MetadataCatalog,
    pub tables: TableSet,
}

impl Assistant {
    pub fn new(registry: Registry, catalog: MetadataCatalog, tables: TableSet) -> Assistant {
        Assistant {
            registry,
            catalog,
            tables,
        }
    }

    pub fn matcher(&self) -> Matcher<'_> {
        Matcher::new(&self.registry, &self.catalog)
    }

    /// One question without conversation state.
    pub fn ask(&self, text: &str) -> TurnOutcome {
        self.respond(&mut DialogueState::default(), text, None)
    }

    pub fn respond(
        &self,
        state: &mut DialogueState,
        text: &str,
        profile: Option<&UserProfile>,
    ) -> TurnOutcome {
        let matcher = self.matcher();
        if let Some(mut pending) = state.pending.take() {
            let fresh = matcher.resolve(text, profile);
            if fresh.status == MatchStatus::Complete {
                return self.run(state, fresh);
            }
            if let Some(res) = self.fill_pending(&matcher, &pending, text) {
                return self.continue_resolution(state, res, profile);
            }
            pending.attempts += 1;
            if pending.attempts > MAX_CLARIFICATIONS {
                return self.no_match(Some(fresh));
            }
            let reply = self.clarify(&pending, profile);
            state.pending = Some(pending);
            return TurnOutcome {
                reply,
                resolution: Some(fresh),
                execution: None,
            };
        }

        let res = matcher.resolve(text, profile);
        match res.status {
            MatchStatus::Complete => self.run(state, res),
            MatchStatus::NoMatch => self.no_match(Some(res)),
            MatchStatus::Incomplete => {
                if let Some(out) = self.follow_up(state, &res) {
                    return out;
                }
                self.continue_resolution(state, res, profile)
            }
        }
    }

    fn continue_resolution(
        &self,
        state: &mut DialogueState,
        res: QueryResolution,
        profile: Option<&UserProfile>,
    ) -> TurnOutcome {
        match res.missing.first() {
            None => self.run(state, res),
            Some(m) => {
                let pending = Pending {
                    slot: m.slot.clone(),
                    resolution: res.clone(),
                    attempts: 0,
                };
                let reply = self.clarify(&pending, profile);
                state.pending = Some(pending);
                TurnOutcome {
                    reply,
                    resolution: Some(res),
                    execution: None,
                }
            }
        }
    }

    /// Applies a short answer to the pending slot.
    fn fill_pending(&self, matcher: &Matcher<'_>, pending: &Pending, text: &str) -> Option<QueryResolution> {
        let command = pending.resolution.command.as_deref()?;
        let spec = self.registry.get(command)?;
        let value = matcher.answer_slot(spec, &pending.slot, text)?;
        let mut res = pending.resolution.clone();
        if let (BoundValue::Column(c), Some(table_slot)) = (&value, spec.table_slot()) {
            let other_columns = spec
                .column_slots()
                .any(|s| s.name != pending.slot && res.bindings.contains_key(&s.name));
            if !other_columns {
                res.bindings
                    .insert(table_slot.name.clone(), BoundValue::Table(c.table.clone()));
            }
        }
        res.bindings.insert(pending.slot.clone(), value);
        res.missing.retain(|m| m.slot != pending.slot);
        if res.missing.is_empty() {
            res.status = MatchStatus::Complete;
        }
        Some(res)
    }

    /// "Show as percentages" after a distribution re-renders it as shares.
    fn follow_up(&self, state: &mut DialogueState, res: &QueryResolution) -> Option<TurnOutcome> {
        if res.command.as_deref() != Some("share") {
            return None;
        }
        let only_column_missing = res.missing.iter().all(|m| m.slot == "target_column");
        let last = state.last_command.clone()?;
        let ResultValue::Distribution {
            column,
            entries,
            total,
            ..
        } = &last.result
        else {
            return None;
        };
        if !only_column_missing {
            return None;
        }
        let spec = self.registry.get("share")?;
        let mut bindings = BTreeMap::new();
        bindings.insert(
            "target_table".to_string(),
            last.bindings
                .get("target_table")
                .cloned()
                .unwrap_or_else(|| BoundValue::Table(column.table.clone())),
        );
        bindings.insert("target_column".to_string(), BoundValue::Column(column.clone()));
        let bound = bind(spec, &bindings, &self.catalog)
            .ok()?
            .with_conditions(last.conditions.clone());
        let result = ResultValue::Distribution {
            column: column.clone(),
            entries: entries.clone(),
            total: *total,
            normalized: true,
        };
        let text = render_answer(spec, &bound, &result, &self.catalog, &res.tokens);
        let mut resolved = res.clone();
        resolved.bindings = bindings.clone();
        resolved.missing.clear();
        resolved.status = MatchStatus::Complete;
        resolved.conditions = last.conditions.clone();
        state.last_command = Some(LastCommand {
            command: "share".into(),
            bindings,
            conditions: last.conditions,
            result: result.clone(),
        });
        Some(TurnOutcome {
            reply: Reply {
                kind: ReplyKind::Answer,
                text,
                command: Some("share".into()),
                suggestions: Vec::new(),
                result: Some(result),
            },
            resolution: Some(resolved),
            execution: None,
        })
    }

    fn run(&self, state: &mut DialogueState, res: QueryResolution) -> TurnOutcome {
        let Some(spec) = res.command.as_deref().and_then(|c| self.registry.get(c)) else {
            return self.no_match(Some(res));
        };
        let bound = match bind(spec, &res.bindings, &self.catalog) {
            Ok(b) => b.with_conditions(res.conditions.clone()),
            Err(e) => return error_outcome(res, format!("I could not set up that question: {e}.")),
        };
        match execute(&bound, &self.tables, &self.catalog) {
            Ok(ex) => {
                let text = render_answer(spec, &bound, &ex.result, &self.catalog, &res.tokens);
                state.last_command = Some(LastCommand {
                    command: spec.name.clone(),
                    bindings: res.bindings.clone(),
                    conditions: res.conditions.clone(),
                    result: ex.result.clone(),
                });
                TurnOutcome {
                    reply: Reply {
                        kind: ReplyKind::Answer,
                        text,
                        command: Some(spec.name.clone()),
                        suggestions: Vec::new(),
                        result: Some(ex.result.clone()),
                    },
                    resolution: Some(res),
                    execution: Some(ex),
                }
            }
            Err(e) => {
                let text = self.explain(&bound, &e);
                error_outcome(res, text)
            }
        }
    }

    fn explain(&self, bound: &BoundCommand, e: &ExecError) -> String {
        let unit = bound
            .target_table()
            .and_then(|t| self.catalog.table(t))
            .map_or("rows", |t| t.unit.as_str());
        match e {
            ExecError::EmptyAfterFilter { .. } => format!(
                "No {unit} match{}.",
                filter_phrase(&bound.conditions, &self.catalog)
            ),
            ExecError::NoValues(c) => format!("There are no recorded values for {}.", self.column_name(c)),
            other => format!("I could not answer that: {other}."),
        }
    }

    fn clarify(&self, pending: &Pending, profile: Option<&UserProfile>) -> Reply {
        let command = pending.resolution.command.clone();
        let spec = command.as_deref().and_then(|c| self.registry.get(c));
        let decl = spec.and_then(|s| s.slot(&pending.slot));
        let candidates: &[ColumnRef] = pending
            .resolution
            .missing
            .iter()
            .find(|m: &&MissingSlot| m.slot == pending.slot)
            .map_or(&[], |m| m.candidates.as_slice());

        let (question, suggestions) = match decl.map(|d| d.kind) {
            Some(SlotKind::Table) => (
                "Which table do you mean".to_string(),
                self.catalog.tables.iter().map(|t| t.name.clone()).collect::<Vec<_>>(),
            ),
            _ => {
                let mut refs: Vec<ColumnRef> = if candidates.is_empty() {
                    self.catalog.featured.clone()
                } else {
                    candidates.to_vec()
                };
                if let Some(d) = decl {
                    refs.retain(|r| self.catalog.column_by_ref(r).is_some_and(|m| d.accepts_type(m.ty)));
                    if refs.is_empty() {
                        refs = self
                            .catalog
                            .columns
                            .iter()
                            .filter(|m| m.exposed && d.accepts_type(m.ty))
                            .map(|m| m.column_ref())
                            .collect();
                    }
                }
                if let Some(p) = profile {
                    // stable: equally used columns keep catalog order
                    refs.sort_by_key(|r| std::cmp::Reverse(p.columns.get(&r.to_string()).copied().unwrap_or(0)));
                }
                let names = refs.iter().map(|r| self.column_name(r)).collect();
                ("Which attribute do you mean".to_string(), names)
            }
        };
        let suggestions: Vec<String> = suggestions.into_iter().take(MAX_SUGGESTIONS).collect();
        Reply {
            kind: ReplyKind::Clarification,
            text: format!("{question}: {}?", suggestions.join(", ")),
            command,
            suggestions,
            result: None,
        }
    }

    fn no_match(&self, res: Option<QueryResolution>) -> TurnOutcome {
        let suggestions: Vec<String> = EXAMPLE_QUESTIONS.iter().map(|s| s.to_string()).collect();
        TurnOutcome {
            reply: Reply {
                kind: ReplyKind::NoMatch,
                text: format!(
                    "I did not understand that question. Try one of: {}",
                    suggestions.join(" / ")
                ),
                command: None,
                suggestions,
                result: None,
            },
            resolution: res,
            execution: None,
        }
    }

    fn column_name(&self, r: &ColumnRef) -> String {
        self.catalog
            .column_by_ref(r)
            .map_or_else(|| r.column.clone(), |m| m.display_name().to_string())
    }
}

fn error_outcome(res: QueryResolution, text: String) -> TurnOutcome {
    TurnOutcome {
        reply: Reply {
            kind: ReplyKind::Error,
            text,
            command: res.command.clone(),
            suggestions: Vec::new(),
            result: None,
        },
        resolution: Some(res),
        execution: None,
    }
}

// ---- logged conversations -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnResult {
    pub session: String,
    pub reply: Reply,
    /// Events appended by this turn (or logged by the original turn when
    /// `replayed` is set).
    pub events: Vec<EventRecord>,
    pub replayed: bool,
}

/// Runs dialogue turns against a session log.
#[derive(Debug)]
pub struct ChatService {
    pub assistant: Arc<Assistant>,
    pub store: Arc<SessionStore>,
    turns: Mutex<()>,
}

impl ChatService {
    pub fn new(assistant: Arc<Assistant>, store: Arc<SessionStore>) -> ChatService {
        ChatService {
            assistant,
            store,
            turns: Mutex::new(()),
        }
    }

    /// Handles one user message. A repeated `turn_id` returns the logged
    /// reply without running the turn again.
    pub fn send(
        &self,
        session: &str,
        user: &str,
        text: &str,
        turn_id: Option<&str>,
    ) -> Result<TurnResult, SessionError> {
        let _guard = self.turns.lock().expect("turn lock");
        let history = self.store.events(session, None)?;
        if let Some(id) = turn_id {
            if let Some(done) = replay_turn(session, &history, id) {
                return Ok(done);
            }
        }

        let mut state = DialogueState::from_events(&history);
        let profile = self.store.profile(user);
        let outcome = self.assistant.respond(&mut state, text, Some(&profile));

        let mut events = Vec::new();
        events.push(self.store.append_next(
            session,
            user,
            EventKind::UserQuery,
            json!({ "text": text, "turn_id": turn_id }),
        )?);
        if let Some(res) = &outcome.resolution {
            events.push(self.store.append_next(
                session,
                ASSISTANT,
                EventKind::Resolution,
                serde_json::to_value(res)?,
            )?);
        }
        if let Some(ex) = &outcome.execution {
            events.push(self.store.append_next(
                session,
                ASSISTANT,
                EventKind::Execution,
                json!({ "trace": ex.trace }),
            )?);
        }
        let mut payload = serde_json::to_value(&outcome.reply)?;
        if let Value::Object(map) = &mut payload {
            map.insert("turn_id".into(), json!(turn_id));
            map.insert("state".into(), serde_json::to_value(&state)?);
        }
        events.push(self.store.append_next(session, ASSISTANT, EventKind::AssistantTurn, payload)?);

        Ok(TurnResult {
            session: session.to_string(),
            reply: outcome.reply,
            events,
            replayed: false,
        })
    }
}

fn replay_turn(session: &str, history: &[EventRecord], turn_id: &str) -> Option<TurnResult> {
    let start = history.iter().position(|e| {
        e.kind == EventKind::UserQuery && e.payload.get("turn_id").and_then(Value::as_str) == Some(turn_id)
    })?;
    let end = history[start..]
        .iter()
        .position(|e| e.kind == EventKind::AssistantTurn)
        .map(|i| start + i)?;
    let reply: Reply = serde_json::from_value(history[end].payload.clone()).ok()?;
    Some(TurnResult {
        session: session.to_string(),
        reply,
        events: history[start..=end].to_vec(),
        replayed: true,
    })
}
