//! Renders execution results as answer text using the command templates.

use std::collections::BTreeMap;

use crate::catalog::{ColumnRef, MetadataCatalog};
use crate::engine::{DistEntry, ResultValue};
use crate::registry::{BoundCommand, CommandSpec, Comparison, Condition};
use crate::table::CellValue;

/// Distributions with more entries than this show the top ones plus "Other".
pub const MAX_ITEMS: usize = 6;
const TOP_ITEMS: usize = 5;

/// Stems that make a trend question answerable with yes or no.
const FALLING: &[&str] = &["decreas", "declin", "fall", "drop"];
const RISING: &[&str] = &["increas", "ris", "grow"];

pub fn percent(count: u64, total: u64) -> String {
    if total == 0 {
        return "0.0".into();
    }
    format!("{:.1}", 100.0 * count as f64 / total as f64)
}

/// Fills `spec`'s template from `result`. `tokens` are the utterance tokens.
pub fn render_answer(
    spec: &CommandSpec,
    bound: &BoundCommand,
    result: &ResultValue,
    catalog: &MetadataCatalog,
    tokens: &[String],
) -> String {
    let mut f: BTreeMap<&str, String> = BTreeMap::new();
    let unit = bound
        .target_table()
        .and_then(|t| catalog.table(t))
        .map(|t| t.unit.clone())
        .unwrap_or_else(|| "rows".into());
    f.insert("unit", unit);
    f.insert("filter", filter_phrase(&bound.conditions, catalog));
    if let Some(c) = bound.columns().first() {
        let name = display(catalog, c);
        f.insert("Column", capitalize(&name));
        f.insert("column", name);
    }

    match result {
        ResultValue::Scalar {
            label,
            count,
            total,
            ..
        } => {
            f.insert("label", label.clone());
            f.insert("count", count.to_string());
            f.insert("total", total.to_string());
            f.insert("pct", percent(*count, *total));
        }
        ResultValue::Distribution {
            column,
            entries,
            total,
            ..
        } => {
            let name = display(catalog, column);
            f.insert("Column", capitalize(&name));
            f.insert("column", name);
            f.insert("total", total.to_string());
            let shares_only = spec.name == "share";
            f.insert("items", items(entries, *total, shares_only));
        }
        ResultValue::Series {
            points,
            slope,
            direction,
            ..
        } => {
            let lead = match asked_direction(tokens) {
                Some(asked) if asked == direction.as_str() => "Yes — ",
                Some(_) => "No — ",
                None => "",
            };
            f.insert("lead", lead.into());
            f.insert("direction", direction.as_str().into());
            f.insert("slope", format!("{slope:.1}"));
            let series: Vec<String> = points.iter().map(|p| format!("{}: {}", p.year, p.count)).collect();
            f.insert("series", series.join(", "));
        }
        ResultValue::Summary { column, summary } => {
            let name = display(catalog, column);
            f.insert("Column", capitalize(&name));
            f.insert("column", name);
            f.insert("total", summary.count.to_string());
            f.insert("min", summary.min.to_string());
            f.insert("max", summary.max.to_string());
            f.insert("mean", format!("{:.2}", summary.mean));
            f.insert("median", summary.median.to_string());
            f.insert("std", format!("{:.2}", summary.std));
        }
        ResultValue::Crosstab {
            row_column,
            col_column,
            rows,
            cols,
            counts,
            total,
        } => {
            f.insert("Row", capitalize(&display(catalog, row_column)));
            f.insert("col", display(catalog, col_column));
            f.insert("total", total.to_string());
            let cells: Vec<String> = rows
                .iter()
                .zip(counts)
                .map(|(r, line)| {
                    let parts: Vec<String> = cols
                        .iter()
                        .zip(line)
                        .filter(|(_, n)| **n > 0)
                        .map(|(c, n)| format!("{} {n}", c.label))
                        .collect();
                    format!("{}: {}", r.label, parts.join(", "))
                })
                .collect();
            f.insert("cells", cells.join("; "));
        }
        ResultValue::Preview {
            columns,
            rows,
            total,
        } => {
            f.insert("count", rows.len().to_string());
            f.insert("total", total.to_string());
            let mut out = format!("\n{}", columns.join(" | "));
            for row in rows {
                let cells: Vec<String> = row.iter().map(cell_text).collect();
                out.push('\n');
                out.push_str(&cells.join(" | "));
            }
            f.insert("rows", out);
        }
    }
    capitalize(&fill(&spec.answer_template, &f))
}

/// Replaces `{name}` placeholders; unknown names are left as they are.
pub fn fill(template: &str, fields: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if fields.contains_key(&after[..close]) => {
                out.push_str(&fields[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn items(entries: &[DistEntry], total: u64, shares_only: bool) -> String {
    let show = |label: &str, count: u64| {
        if shares_only {
            format!("{label}: {}%", percent(count, total))
        } else {
            format!("{label}: {count} ({}%)", percent(count, total))
        }
    };
    if entries.len() <= MAX_ITEMS {
        return entries
            .iter()
            .map(|e| show(&e.label, e.count))
            .collect::<Vec<_>>()
            .join(", ");
    }
    let mut ranked: Vec<&DistEntry> = entries.iter().collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then(a.code.cmp(&b.code)));
    let mut parts: Vec<String> = ranked[..TOP_ITEMS].iter().map(|e| show(&e.label, e.count)).collect();
    let rest: u64 = ranked[TOP_ITEMS..].iter().map(|e| e.count).sum();
    parts.push(show("Other", rest));
    parts.join(", ")
}

fn asked_direction(tokens: &[String]) -> Option<&'static str> {
    let has = |stems: &[&str]| tokens.iter().any(|t| stems.iter().any(|s| t.starts_with(s)));
    if has(FALLING) {
        Some("decreasing")
    } else if has(RISING) {
        Some("increasing")
    } else {
        None
    }
}

/// " where weather is Light rain and year > 2017", or empty.
pub fn filter_phrase(conditions: &[Condition], catalog: &MetadataCatalog) -> String {
    if conditions.is_empty() {
        return String::new();
    }
    let parts: Vec<String> = conditions
        .iter()
        .map(|c| {
            let name = display(catalog, &c.column);
            let meta = catalog.column_by_ref(&c.column);
            let label = |v: i64| meta.map(|m| m.label(v)).unwrap_or_else(|| v.to_string());
            match &c.cmp {
                Comparison::Eq(v) => format!("{name} is {}", label(*v)),
                Comparison::Ne(v) => format!("{name} is not {}", label(*v)),
                Comparison::In(vs) => {
                    let labels: Vec<String> = vs.iter().map(|v| label(*v)).collect();
                    format!("{name} is {}", labels.join(" or "))
                }
                other => format!("{name} {other}"),
            }
        })
        .collect();
    format!(" where {}", parts.join(" and "))
}

fn display(catalog: &MetadataCatalog, c: &ColumnRef) -> String {
    catalog
        .column_by_ref(c)
        .map(|m| m.display_name().to_string())
        .unwrap_or_else(|| c.column.clone())
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn cell_text(c: &CellValue) -> String {
    match c {
        CellValue::Code(v) | CellValue::Number(v) => v.to_string(),
        CellValue::Text(s) => s.clone(),
        CellValue::Missing => "NA".into(),
    }
}
