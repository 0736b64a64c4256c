//! Plain-text and JSON renderings of command output.

use std::fmt::Write;

use cbi_core::dialogue::TurnOutcome;
use cbi_core::table::LoadReport;
use cbi_core::{CorpusReport, QueryResolution, ReplyKind};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
}

fn resolution_text(out: &mut String, res: &QueryResolution) {
    match &res.command {
        Some(cmd) => {
            let _ = writeln!(out, "resolution: {cmd} (confidence {:.3})", res.confidence);
        }
        None => out.push_str("resolution: none\n"),
    }
    for (slot, value) in &res.bindings {
        let _ = writeln!(out, "  {slot} = {value}");
    }
    for c in &res.conditions {
        let _ = writeln!(out, "  where {} {}", c.column, c.cmp);
    }
    for m in &res.missing {
        let cands: Vec<String> = m.candidates.iter().map(ToString::to_string).collect();
        if cands.is_empty() {
            let _ = writeln!(out, "  missing {}", m.slot);
        } else {
            let _ = writeln!(out, "  missing {} ({})", m.slot, cands.join(", "));
        }
    }
}

pub fn ask(outcome: &TurnOutcome, format: Format) -> String {
    match format {
        Format::Json => {
            let doc = json!({
                "kind": outcome.reply.kind,
                "text": outcome.reply.text,
                "suggestions": outcome.reply.suggestions,
                "resolution": outcome.resolution,
                "trace": outcome.execution.as_ref().map(|e| &e.trace),
                "result": outcome.reply.result,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("json value");
            s.push('\n');
            s
        }
        Format::Text => {
            let mut out = String::new();
            if let Some(res) = &outcome.resolution {
                resolution_text(&mut out, res);
            }
            if let Some(ex) = &outcome.execution {
                let t = &ex.trace;
                out.push_str("trace:\n");
                let _ = writeln!(out, "  ast: {}", t.bound_ast);
                if !t.joins.is_empty() {
                    let _ = writeln!(out, "  joins: {}", t.joins.join("; "));
                }
                if !t.conditions.is_empty() {
                    let _ = writeln!(out, "  filter: {}", t.conditions.join(" and "));
                }
                let _ = writeln!(
                    out,
                    "  rows: {} in, {} after filter, {} used",
                    t.rows_in, t.rows_after_filter, t.rows_used
                );
                for (col, n) in &t.dropped_missing {
                    let _ = writeln!(out, "  dropped missing {col}: {n}");
                }
            }
            let head = match outcome.reply.kind {
                ReplyKind::Answer => "answer",
                ReplyKind::Clarification => "clarification",
                ReplyKind::NoMatch => "no match",
                ReplyKind::Error => "error",
            };
            let _ = writeln!(out, "{head}: {}", outcome.reply.text);
            if !outcome.reply.suggestions.is_empty() {
                let _ = writeln!(out, "suggestions: {}", outcome.reply.suggestions.join(" | "));
            }
            out
        }
    }
}

/// Largest rejection count allowed for `data_lines` lines at `fraction`.
pub fn reject_cap(data_lines: usize, fraction: f64) -> usize {
    (fraction * data_lines as f64).floor() as usize
}

/// Returns the report text and whether every table is within the cap.
pub fn ingest(reports: &[LoadReport], fraction: f64, format: Format) -> (String, bool) {
    let ok = reports
        .iter()
        .all(|r| r.rejected.len() <= reject_cap(r.data_lines, fraction));
    let text = match format {
        Format::Json => {
            let tables: Vec<_> = reports
                .iter()
                .map(|r| {
                    json!({
                        "table": r.table.name(),
                        "data_lines": r.data_lines,
                        "rows": r.table.row_count(),
                        "delimiter": (r.delimiter as char).to_string(),
                        "cap": reject_cap(r.data_lines, fraction),
                        "rejected": r.rejected,
                        "skipped_columns": r.skipped_columns,
                    })
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&json!({ "ok": ok, "tables": tables })).expect("json value");
            s.push('\n');
            s
        }
        Format::Text => {
            let mut out = String::new();
            for r in reports {
                let cap = reject_cap(r.data_lines, fraction);
                let _ = writeln!(
                    out,
                    "{}: {} lines, {} rejected (cap {cap}), delimiter {:?}",
                    r.table.name(),
                    r.data_lines,
                    r.rejected.len(),
                    r.delimiter as char
                );
                for rej in &r.rejected {
                    let reason = serde_json::to_value(&rej.reason).expect("json value");
                    let _ = writeln!(out, "  line {}: {reason}", rej.line);
                }
            }
            out.push_str(if ok { "ok\n" } else { "rejection cap exceeded\n" });
            out
        }
    };
    (text, ok)
}

pub fn eval(report: &CorpusReport, format: Format) -> String {
    match format {
        Format::Json => {
            let doc = json!({
                "total": report.total,
                "correct": report.correct,
                "accuracy": report.accuracy(),
                "misses": report.misses,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("json value");
            s.push('\n');
            s
        }
        Format::Text => {
            let mut out = format!(
                "accuracy {}/{} ({:.1}%)\n",
                report.correct,
                report.total,
                100.0 * report.accuracy()
            );
            for m in &report.misses {
                let _ = writeln!(out, "line {}: {}", m.line, m.utterance);
                let _ = writeln!(out, "  expected {}", m.expected);
                let _ = writeln!(out, "  got      {}", m.got);
            }
            out
        }
    }
}
