//! Labelled question corpus and matcher accuracy.
//!
//! Format: one entry per line, tab-separated:
//! `utterance<TAB>command<TAB>slot=value;slot=value`. Values are a table
//! name or `table.column`. Blank lines and lines starting with `#` are
//! ignored.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::matcher::{MatchStatus, Matcher};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("corpus line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("corpus is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusEntry {
    pub line: usize,
    pub utterance: String,
    pub command: String,
    pub slots: BTreeMap<String, String>,
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        let [utterance, command, slots] = fields.as_slice() else {
            return Err(CorpusError::Malformed {
                line,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let mut map = BTreeMap::new();
        for pair in slots.split(';').filter(|p| !p.trim().is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| CorpusError::Malformed {
                line,
                msg: format!("slot {pair:?} is not slot=value"),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        out.push(CorpusEntry {
            line,
            utterance: utterance.trim().to_string(),
            command: command.trim().to_string(),
            slots: map,
        });
    }
    if out.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusMiss {
    pub line: usize,
    pub utterance: String,
    pub expected: String,
    pub got: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub total: usize,
    pub correct: usize,
    pub misses: Vec<CorpusMiss>,
}

impl CorpusReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

fn describe(command: &str, slots: &BTreeMap<String, String>) -> String {
    let parts: Vec<String> = slots.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{command}({})", parts.join(", "))
}

/// An entry counts as correct when the command and every slot binding
/// match exactly and nothing is left to clarify.
pub fn evaluate(matcher: &Matcher<'_>, entries: &[CorpusEntry]) -> CorpusReport {
    let mut correct = 0;
    let mut misses = Vec::new();
    for e in entries {
        let res = matcher.resolve(&e.utterance, None);
        let got_slots: BTreeMap<String, String> =
            res.bindings.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
        let got_cmd = res.command.clone().unwrap_or_else(|| "no_match".into());
        if res.status == MatchStatus::Complete && got_cmd == e.command && got_slots == e.slots {
            correct += 1;
        } else {
            misses.push(CorpusMiss {
                line: e.line,
                utterance: e.utterance.clone(),
                expected: describe(&e.command, &e.slots),
                got: describe(&got_cmd, &got_slots),
            });
        }
    }
    CorpusReport {
        total: entries.len(),
        correct,
        misses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::MetadataCatalog;
    use crate::registry::builtin_registry;

    #[test]
    fn parses_entries_and_skips_comments() {
        let text = "# header\n\nWhat weather has the most accidents?\tmost_of\ttarget_table=characteristics;target_column=characteristics.atm\n";
        let entries = parse_corpus(text).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].line, 3);
        assert_eq!(entries[0].slots["target_column"], "characteristics.atm");
    }

    #[test]
    fn malformed_lines_are_reported() {
        assert!(matches!(parse_corpus("a\tb\n"), Err(CorpusError::Malformed { line: 1, .. })));
        assert!(matches!(parse_corpus("a\tb\tslot\n"), Err(CorpusError::Malformed { line: 1, .. })));
        assert_eq!(parse_corpus("# only\n"), Err(CorpusError::Empty));
    }

    #[test]
    fn evaluation_counts_exact_matches() {
        let r = builtin_registry();
        let c = MetadataCatalog::shipped();
        let m = Matcher::new(&r, &c);
        let entries = parse_corpus(
            "What weather has the most accidents?\tmost_of\ttarget_table=characteristics;target_column=characteristics.atm\n\
             What weather has the most accidents?\tleast_of\ttarget_table=characteristics;target_column=characteristics.atm\n",
        )
        .unwrap();
        let report = evaluate(&m, &entries);
        assert_eq!((report.total, report.correct), (2, 1));
        assert_eq!(report.accuracy(), 0.5);
        assert_eq!(report.misses[0].line, 2);
    }
}
