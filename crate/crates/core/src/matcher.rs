//! Maps an utterance onto a command and its slot bindings.
//!
//! Scoring: `0.7 * trigger_overlap + 0.3 * slot_coverage`, where the trigger
//! overlap is the best Jaccard similarity between a trigger phrase and the
//! utterance tokens, and coverage is the share of slots filled from the
//! utterance itself.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::{ColumnMeta, ColumnRef, MetadataCatalog};
use crate::registry::{BoundValue, CommandSpec, Comparison, Condition, Registry, SlotKind};
use crate::text::tokenize;

pub const TRIGGER_WEIGHT: f64 = 0.7;
pub const COVERAGE_WEIGHT: f64 = 0.3;
pub const MATCH_THRESHOLD: f64 = 0.35;
pub const HISTORY_BONUS: f64 = 0.01;
/// Only commands this close to the best base score get a history bonus.
pub const HISTORY_WINDOW: f64 = 0.02;
pub const MAX_ALTERNATIVES: usize = 3;
const MAX_NGRAM: usize = 4;

/// Labels too generic to stand alone as a filter.
const GENERIC_LABELS: &[&str] = &["other", "none", "unknown", "applicable"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Complete,
    Incomplete,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingSlot {
    pub slot: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<ColumnRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub command: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResolution {
    pub utterance: String,
    pub tokens: Vec<String>,
    pub status: MatchStatus,
    pub command: Option<String>,
    pub confidence: f64,
    pub bindings: BTreeMap<String, BoundValue>,
    #[serde(default)]
    pub missing: Vec<MissingSlot>,
    #[serde(default)]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub alternatives: Vec<Alternative>,
}

/// Per-user usage counts, rebuilt from logged resolutions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub commands: BTreeMap<String, u64>,
    pub columns: BTreeMap<String, u64>,
}

impl UserProfile {
    pub fn record(&mut self, res: &QueryResolution) {
        if res.status != MatchStatus::Complete {
            return;
        }
        if let Some(cmd) = &res.command {
            *self.commands.entry(cmd.clone()).or_default() += 1;
        }
        for v in res.bindings.values() {
            if let BoundValue::Column(c) = v {
                *self.columns.entry(c.to_string()).or_default() += 1;
            }
        }
    }

    /// Bonus in `[0, HISTORY_BONUS]` proportional to how often `command`
    /// was used relative to the user's most used command.
    pub fn bonus(&self, command: &str) -> f64 {
        let max = self.commands.values().copied().max().unwrap_or(0);
        if max == 0 {
            return 0.0;
        }
        HISTORY_BONUS * self.commands.get(command).copied().unwrap_or(0) as f64 / max as f64
    }
}

/// Spans found in an utterance after overlap resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    /// Column mentions in utterance order; more than one candidate means
    /// the phrase is ambiguous.
    pub columns: Vec<Vec<ColumnRef>>,
    pub tables: Vec<String>,
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone)]
enum Found {
    Condition(Vec<Condition>),
    Column(Vec<ColumnRef>),
    Table(String),
}

impl Found {
    fn rank(&self) -> u8 {
        match self {
            Found::Condition(_) => 0,
            Found::Column(_) => 1,
            Found::Table(_) => 2,
        }
    }
}

#[derive(Debug, Clone)]
struct Span {
    start: usize,
    len: usize,
    found: Found,
}

/// Slot assignment for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotFill {
    pub bindings: BTreeMap<String, BoundValue>,
    pub missing: Vec<MissingSlot>,
    /// Slots filled from the utterance or a slot hint, as opposed to defaults.
    pub filled: usize,
}

pub struct Matcher<'a> {
    registry: &'a Registry,
    catalog: &'a MetadataCatalog,
    triggers: Vec<Vec<BTreeSet<String>>>,
}

impl<'a> Matcher<'a> {
    pub fn new(registry: &'a Registry, catalog: &'a MetadataCatalog) -> Matcher<'a> {
        let triggers = registry
            .iter()
            .map(|c| {
                c.triggers
                    .iter()
                    .map(|t| tokenize(t).into_iter().collect::<BTreeSet<_>>())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .collect();
        Matcher {
            registry,
            catalog,
            triggers,
        }
    }

    pub fn registry(&self) -> &Registry {
        self.registry
    }

    pub fn catalog(&self) -> &MetadataCatalog {
        self.catalog
    }

    /// Resolves an utterance. `profile` adds the history bonus.
    pub fn resolve(&self, utterance: &str, profile: Option<&UserProfile>) -> QueryResolution {
        let tokens = tokenize(utterance);
        let words: BTreeSet<String> = tokens.iter().cloned().collect();
        let ex = self.extract(&tokens);

        let mut scored: Vec<(usize, f64, SlotFill)> = self
            .registry
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let overlap = self.triggers[i]
                    .iter()
                    .map(|t| jaccard(t, &words))
                    .fold(0.0, f64::max);
                let fill = self.fill(spec, &ex);
                let coverage = if spec.slots.is_empty() {
                    1.0
                } else {
                    fill.filled as f64 / spec.slots.len() as f64
                };
                (i, TRIGGER_WEIGHT * overlap + COVERAGE_WEIGHT * coverage, fill)
            })
            .collect();

        let top = scored.iter().map(|s| s.1).fold(0.0, f64::max);
        if let Some(p) = profile {
            for s in &mut scored {
                if top - s.1 <= HISTORY_WINDOW {
                    s.1 += p.bonus(&self.registry.iter().nth(s.0).expect("index").name);
                }
            }
        }
        // stable: equal scores keep registry order
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));

        let alternatives = scored
            .iter()
            .take(MAX_ALTERNATIVES)
            .map(|(i, s, _)| Alternative {
                command: self.registry.iter().nth(*i).expect("index").name.clone(),
                score: round3(*s),
            })
            .collect();

        let (best, score, fill) = scored.into_iter().next().expect("registry is not empty");
        let confidence = round3(score.min(1.0));
        if confidence < MATCH_THRESHOLD {
            return QueryResolution {
                utterance: utterance.to_string(),
                tokens,
                status: MatchStatus::NoMatch,
                command: None,
                confidence,
                bindings: BTreeMap::new(),
                missing: Vec::new(),
                conditions: Vec::new(),
                alternatives,
            };
        }
        let spec = self.registry.iter().nth(best).expect("index");
        QueryResolution {
            utterance: utterance.to_string(),
            tokens,
            status: if fill.missing.is_empty() {
                MatchStatus::Complete
            } else {
                MatchStatus::Incomplete
            },
            command: Some(spec.name.clone()),
            confidence,
            bindings: fill.bindings,
            missing: fill.missing,
            conditions: ex.conditions,
            alternatives,
        }
    }

    /// Finds column, table, label and year spans. Longer spans win over
    /// shorter ones; among equally long overlapping spans the rightmost
    /// wins, so "type of road gradient" reads as a gradient.
    pub fn extract(&self, tokens: &[String]) -> Extraction {
        let mut spans = Vec::new();
        for start in 0..tokens.len() {
            for len in 1..=MAX_NGRAM.min(tokens.len() - start) {
                let key = tokens[start..start + len].join(" ");
                let cols = self.exposed(self.catalog.columns_for_key(&key));
                if !cols.is_empty() {
                    spans.push(Span {
                        start,
                        len,
                        found: Found::Column(cols),
                    });
                }
                if let Some(c) = self.bare_label(&key) {
                    spans.push(Span {
                        start,
                        len,
                        found: Found::Condition(vec![c]),
                    });
                }
                if let Some(t) = self.catalog.table_for_term(&key) {
                    spans.push(Span {
                        start,
                        len,
                        found: Found::Table(t.name.clone()),
                    });
                }
            }
            if let Some(span) = self.year_span(tokens, start) {
                spans.push(span);
            }
        }
        spans.extend(self.qualified(tokens, &spans));
        merge_same_column(&mut spans);

        spans.sort_by(|a, b| {
            b.len
                .cmp(&a.len)
                .then(a.found.rank().cmp(&b.found.rank()))
                .then(b.start.cmp(&a.start))
        });
        let mut taken = vec![false; tokens.len()];
        let mut chosen = Vec::new();
        for s in spans {
            if taken[s.start..s.start + s.len].iter().any(|t| *t) {
                continue;
            }
            taken[s.start..s.start + s.len].iter_mut().for_each(|t| *t = true);
            chosen.push(s);
        }
        chosen.sort_by_key(|s| s.start);

        let mut ex = Extraction::default();
        for s in chosen {
            match s.found {
                Found::Column(c) => ex.columns.push(c),
                Found::Table(t) => ex.tables.push(t),
                Found::Condition(c) => ex.conditions.extend(c),
            }
        }
        ex
    }

    fn exposed(&self, cols: Vec<&ColumnMeta>) -> Vec<ColumnRef> {
        cols.into_iter()
            .filter(|c| c.exposed)
            .map(ColumnMeta::column_ref)
            .collect()
    }

    /// A label standing alone filters its column only when the column allows
    /// bare labels and exactly one such column knows the label.
    fn bare_label(&self, key: &str) -> Option<Condition> {
        if GENERIC_LABELS.contains(&key) {
            return None;
        }
        let hits: Vec<_> = self
            .catalog
            .label_hits(key)
            .into_iter()
            .filter(|h| {
                self.catalog
                    .column_by_ref(&h.column)
                    .is_some_and(|c| c.bare_labels && c.exposed)
            })
            .collect();
        let first = hits.first()?;
        if hits.iter().any(|h| h.column != first.column) {
            return None;
        }
        let codes: Vec<i64> = hits.iter().map(|h| h.code).collect();
        Some(code_condition(first.column.clone(), codes))
    }

    /// "<column> <label>" or "<label> <column>" spans, for any column.
    fn qualified(&self, tokens: &[String], spans: &[Span]) -> Vec<Span> {
        let mut out = Vec::new();
        for s in spans {
            let Found::Column(cols) = &s.found else {
                continue;
            };
            for len in 1..=MAX_NGRAM {
                let after = s.start + s.len;
                if after + len <= tokens.len() {
                    let key = tokens[after..after + len].join(" ");
                    if let Some(c) = self.label_for(&key, cols) {
                        out.push(Span {
                            start: s.start,
                            len: s.len + len,
                            found: Found::Condition(vec![c]),
                        });
                    }
                }
                if len <= s.start {
                    let key = tokens[s.start - len..s.start].join(" ");
                    if let Some(c) = self.label_for(&key, cols) {
                        out.push(Span {
                            start: s.start - len,
                            len: s.len + len,
                            found: Found::Condition(vec![c]),
                        });
                    }
                }
            }
        }
        out
    }

    fn label_for(&self, key: &str, cols: &[ColumnRef]) -> Option<Condition> {
        let hits: Vec<_> = self
            .catalog
            .label_hits(key)
            .into_iter()
            .filter(|h| cols.contains(&h.column))
            .collect();
        let first = hits.first()?;
        if hits.iter().any(|h| h.column != first.column) {
            return None;
        }
        Some(code_condition(
            first.column.clone(),
            hits.iter().map(|h| h.code).collect(),
        ))
    }

    /// `2018`, `after 2017`, `before 2019`, `since 2017`, `until 2018`,
    /// `between 2016 2018`.
    fn year_span(&self, tokens: &[String], start: usize) -> Option<Span> {
        let column = self.year_column()?;
        let word = tokens[start].as_str();
        let year_at = |i: usize| tokens.get(i).and_then(|t| parse_year(t));
        let (len, cmp) = match word {
            "after" => (2, Comparison::Gt(year_at(start + 1)?)),
            "before" => (2, Comparison::Lt(year_at(start + 1)?)),
            "since" => (2, Comparison::Ge(year_at(start + 1)?)),
            "until" => (2, Comparison::Le(year_at(start + 1)?)),
            "between" => {
                let (a, b) = (year_at(start + 1)?, year_at(start + 2)?);
                let (lo, hi) = (a.min(b), a.max(b));
                (3, Comparison::In((lo..=hi).collect()))
            }
            _ => (1, Comparison::Eq(year_at(start)?)),
        };
        Some(Span {
            start,
            len,
            found: Found::Condition(vec![Condition::new(column, cmp)]),
        })
    }

    fn year_column(&self) -> Option<ColumnRef> {
        self.exposed(self.catalog.columns_for_key("year"))
            .into_iter()
            .next()
    }

    /// Assigns extracted mentions to the command's slots.
    pub fn fill(&self, spec: &CommandSpec, ex: &Extraction) -> SlotFill {
        let mut bindings = BTreeMap::new();
        let mut missing = Vec::new();
        let mut filled = 0;
        let mut used = vec![false; ex.columns.len()];
        let mut chosen_tables: Vec<String> = Vec::new();

        for slot in spec.column_slots() {
            let accepts = |c: &ColumnRef| {
                self.catalog
                    .column_by_ref(c)
                    .is_some_and(|m| slot.accepts_type(m.ty))
            };
            let hinted: Vec<ColumnRef> = slot
                .hint
                .as_deref()
                .map(|h| self.exposed(self.catalog.columns_for_key(h)))
                .unwrap_or_default();

            let mut pick = None;
            if !hinted.is_empty() {
                pick = ex
                    .columns
                    .iter()
                    .enumerate()
                    .find(|(i, cands)| !used[*i] && cands.iter().any(|c| hinted.contains(c)))
                    .map(|(i, _)| i);
            }
            if pick.is_none() {
                pick = ex
                    .columns
                    .iter()
                    .enumerate()
                    .find(|(i, cands)| !used[*i] && cands.iter().any(&accepts))
                    .map(|(i, _)| i);
            }

            match pick {
                Some(i) => {
                    used[i] = true;
                    let cands: Vec<ColumnRef> =
                        ex.columns[i].iter().filter(|c| accepts(c)).cloned().collect();
                    match disambiguate(&cands, &chosen_tables, &ex.tables) {
                        Some(c) => {
                            chosen_tables.push(c.table.clone());
                            bindings.insert(slot.name.clone(), BoundValue::Column(c));
                            filled += 1;
                        }
                        None => missing.push(MissingSlot {
                            slot: slot.name.clone(),
                            candidates: cands,
                        }),
                    }
                }
                None => match hinted.into_iter().find(&accepts) {
                    Some(c) => {
                        chosen_tables.push(c.table.clone());
                        bindings.insert(slot.name.clone(), BoundValue::Column(c));
                        filled += 1;
                    }
                    None => missing.push(MissingSlot {
                        slot: slot.name.clone(),
                        candidates: Vec::new(),
                    }),
                },
            }
        }

        if let Some(slot) = spec.table_slot() {
            let first_column = spec.column_slots().find_map(|s| match bindings.get(&s.name) {
                Some(BoundValue::Column(c)) => Some(c.table.clone()),
                _ => None,
            });
            let from_utterance =
                first_column.is_some() || !ex.tables.is_empty() || !ex.conditions.is_empty();
            let table = first_column
                .or_else(|| ex.tables.first().cloned())
                .or_else(|| ex.conditions.first().map(|c| c.column.table.clone()))
                .unwrap_or_else(|| self.catalog.default_table.clone());
            if from_utterance {
                filled += 1;
            }
            bindings.insert(slot.name.clone(), BoundValue::Table(table));
        }
        SlotFill {
            bindings,
            missing,
            filled,
        }
    }

    /// Interprets a short answer to a clarification about `slot`.
    pub fn answer_slot(&self, spec: &CommandSpec, slot: &str, text: &str) -> Option<BoundValue> {
        let decl = spec.slot(slot)?;
        match decl.kind {
            SlotKind::Column => self
                .catalog
                .resolve_term(text)
                .into_iter()
                .map(|(m, _)| m)
                .filter(|m| m.exposed && decl.accepts_type(m.ty))
                .map(|m| BoundValue::Column(m.column_ref()))
                .next()
                .or_else(|| {
                    let ex = self.extract(&tokenize(text));
                    ex.columns
                        .into_iter()
                        .flatten()
                        .find(|c| {
                            self.catalog
                                .column_by_ref(c)
                                .is_some_and(|m| decl.accepts_type(m.ty))
                        })
                        .map(BoundValue::Column)
                }),
            SlotKind::Table => {
                let ex = self.extract(&tokenize(text));
                ex.tables.into_iter().next().map(BoundValue::Table)
            }
        }
    }
}

/// Overlapping or adjacent mentions of the same column ("road surface
/// conditions") become one span.
fn merge_same_column(spans: &mut Vec<Span>) {
    loop {
        let mut merged = None;
        'outer: for i in 0..spans.len() {
            for j in i + 1..spans.len() {
                let (a, b) = (&spans[i], &spans[j]);
                let (Found::Column(ca), Found::Column(cb)) = (&a.found, &b.found) else {
                    continue;
                };
                let (lo, hi) = (a.start.min(b.start), (a.start + a.len).max(b.start + b.len));
                let touching = a.start < b.start + b.len && b.start < a.start + a.len;
                let grows = hi - lo > a.len.max(b.len);
                let exists = spans.iter().any(|s| {
                    s.start == lo && s.len == hi - lo && matches!(&s.found, Found::Column(c) if c == ca)
                });
                if ca == cb && touching && grows && !exists {
                    merged = Some((i, j, lo, hi - lo));
                    break 'outer;
                }
            }
        }
        match merged {
            Some((i, _, start, len)) => {
                let found = spans[i].found.clone();
                spans.push(Span { start, len, found });
            }
            None => return,
        }
    }
}

fn disambiguate(cands: &[ColumnRef], chosen: &[String], mentioned: &[String]) -> Option<ColumnRef> {
    match cands {
        [] => None,
        [only] => Some(only.clone()),
        _ => {
            let prefer = |tables: &[String]| {
                let hits: Vec<_> = cands.iter().filter(|c| tables.contains(&c.table)).collect();
                match hits.as_slice() {
                    [one] => Some((*one).clone()),
                    _ => None,
                }
            };
            prefer(chosen).or_else(|| prefer(mentioned))
        }
    }
}

fn code_condition(column: ColumnRef, mut codes: Vec<i64>) -> Condition {
    codes.sort_unstable();
    codes.dedup();
    let cmp = if codes.len() == 1 {
        Comparison::Eq(codes[0])
    } else {
        Comparison::In(codes)
    };
    Condition::new(column, cmp)
}

fn parse_year(t: &str) -> Option<i64> {
    if t.len() != 4 {
        return None;
    }
    let y: i64 = t.parse().ok()?;
    (1900..=2100).contains(&y).then_some(y)
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
