//! Executes bound commands against loaded tables.
//!
//! Execution prepares a view (join, filter, drop missing values in the
//! target columns) and then interprets the bound semantic tree over it.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{AstNode, Literal};
use crate::catalog::{ColumnRef, MetadataCatalog};
use crate::registry::{BoundCommand, Condition};
use crate::table::{drop_missing, join_on_accident, CellValue, Table, TableError, TableSet, ACCIDENT_KEY};

/// Slopes smaller than this (rows per year) read as stable.
pub const STABLE_SLOPE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("table {0} is not loaded")]
    UnknownTable(String),
    #[error("column {0} is not available")]
    MissingColumn(ColumnRef),
    #[error("no rows left after filtering on {}", .conditions.join(", "))]
    EmptyAfterFilter { conditions: Vec<String> },
    #[error("column {0} has no values")]
    NoValues(ColumnRef),
    #[error("parameter {0} was never bound")]
    UnboundParam(String),
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("{method} expects {expected}, got {found}")]
    TypeMismatch {
        method: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
    Stable,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Increasing => "increasing",
            Direction::Decreasing => "decreasing",
            Direction::Stable => "stable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistEntry {
    pub code: i64,
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub year: i64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub count: u64,
    pub min: i64,
    pub max: i64,
    pub mean: f64,
    /// Lower middle value for even counts.
    pub median: i64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultValue {
    /// A single answer. `code` is absent for plain row counts.
    Scalar {
        #[serde(skip_serializing_if = "Option::is_none")]
        code: Option<i64>,
        label: String,
        count: u64,
        total: u64,
    },
    /// Counts per code in ascending code order.
    Distribution {
        column: ColumnRef,
        entries: Vec<DistEntry>,
        total: u64,
        normalized: bool,
    },
    Series {
        column: ColumnRef,
        points: Vec<SeriesPoint>,
        slope: f64,
        direction: Direction,
    },
    Crosstab {
        row_column: ColumnRef,
        col_column: ColumnRef,
        rows: Vec<DistEntry>,
        cols: Vec<DistEntry>,
        /// `counts[i][j]` pairs `rows[i]` with `cols[j]`.
        counts: Vec<Vec<u64>>,
        total: u64,
    },
    Summary {
        column: ColumnRef,
        summary: NumericSummary,
    },
    Preview {
        columns: Vec<String>,
        rows: Vec<Vec<CellValue>>,
        total: u64,
    },
}

impl ResultValue {
    pub fn kind(&self) -> &'static str {
        match self {
            ResultValue::Scalar { .. } => "scalar",
            ResultValue::Distribution { .. } => "distribution",
            ResultValue::Series { .. } => "series",
            ResultValue::Crosstab { .. } => "crosstab",
            ResultValue::Summary { .. } => "summary",
            ResultValue::Preview { .. } => "preview",
        }
    }
}

/// What execution did, step by step. Deterministic for a given input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub command: String,
    pub target_table: String,
    pub bound_ast: String,
    pub joins: Vec<String>,
    pub conditions: Vec<String>,
    pub rows_in: u64,
    pub rows_after_filter: u64,
    pub dropped_missing: BTreeMap<String, u64>,
    pub rows_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub result: ResultValue,
    pub trace: ExecutionTrace,
}

pub fn execute(
    bound: &BoundCommand,
    tables: &TableSet,
    catalog: &MetadataCatalog,
) -> Result<Execution, ExecError> {
    let target = bound
        .target_table()
        .ok_or_else(|| ExecError::UnknownTable(String::new()))?
        .to_string();
    let base = tables
        .get(&target)
        .ok_or_else(|| ExecError::UnknownTable(target.clone()))?;
    let rows_in = base.row_count() as u64;
    let mut view: Table = (**base).clone();

    let mut joins = Vec::new();
    let mut joined: BTreeSet<String> = BTreeSet::from([target.clone()]);
    for c in bound.columns() {
        if joined.insert(c.table.clone()) {
            let other = tables
                .get(&c.table)
                .ok_or_else(|| ExecError::UnknownTable(c.table.clone()))?;
            view = join_on_accident(&view, other)?;
            joins.push(format!("{target} ⋈ {} on {ACCIDENT_KEY}", c.table));
        }
    }

    view = apply_conditions(view, &bound.conditions, &joined, tables)?;
    let rows_after_filter = view.row_count() as u64;
    let is_count = bound.spec.name == "count";
    if view.row_count() == 0 && !bound.conditions.is_empty() && !is_count {
        return Err(ExecError::EmptyAfterFilter {
            conditions: bound.conditions.iter().map(|c| c.to_string()).collect(),
        });
    }

    let mut dropped_missing = BTreeMap::new();
    for c in bound.columns() {
        let name = view
            .column_from(&c.table, &c.column)
            .ok_or_else(|| ExecError::MissingColumn(c.clone()))?
            .name
            .clone();
        let (clean, removed) = drop_missing(&view, &name)?;
        dropped_missing.insert(c.to_string(), removed as u64);
        view = clean;
        if view.row_count() == 0 {
            return Err(ExecError::NoValues(c.clone()));
        }
    }

    let ctx = Context {
        view: &view,
        target: &target,
        catalog,
        total_rows: rows_in,
    };
    let result = match ctx.eval(&bound.tree)? {
        Value::Result(r) => r,
        Value::Counts { r, counts } => ctx.distribution(r, &counts, false),
        other => {
            return Err(ExecError::TypeMismatch {
                method: "return".into(),
                expected: "a result",
                found: other.name(),
            })
        }
    };
    Ok(Execution {
        result,
        trace: ExecutionTrace {
            command: bound.spec.name.clone(),
            target_table: target,
            bound_ast: bound.tree.serialize(),
            joins,
            conditions: bound.conditions.iter().map(|c| c.to_string()).collect(),
            rows_in,
            rows_after_filter,
            dropped_missing,
            rows_used: view.row_count() as u64,
        },
    })
}

/// Filters in place where the column is in the view; otherwise keeps the
/// rows whose accident has a matching row in the condition's table. All
/// conditions on one foreign table must hold on the same foreign row.
fn apply_conditions(
    view: Table,
    conditions: &[Condition],
    joined: &BTreeSet<String>,
    tables: &TableSet,
) -> Result<Table, ExecError> {
    if conditions.is_empty() {
        return Ok(view);
    }
    let mut keep: Vec<bool> = vec![true; view.row_count()];
    let mut foreign: BTreeMap<&str, Vec<&Condition>> = BTreeMap::new();
    for cond in conditions {
        if joined.contains(&cond.column.table) {
            let col = view
                .column_from(&cond.column.table, &cond.column.column)
                .ok_or_else(|| ExecError::MissingColumn(cond.column.clone()))?;
            let values = int_values(col, &cond.column)?;
            for (k, v) in keep.iter_mut().zip(values) {
                *k &= v.is_some_and(|x| cond.cmp.holds(x));
            }
        } else {
            foreign.entry(&cond.column.table).or_default().push(cond);
        }
    }
    for (table, conds) in foreign {
        let other = tables
            .get(table)
            .ok_or_else(|| ExecError::UnknownTable(table.to_string()))?;
        let keys = other.require(ACCIDENT_KEY)?;
        let keys = int_values(keys, &ColumnRef::new(table, ACCIDENT_KEY))?;
        let mut cols = Vec::new();
        for c in &conds {
            let col = other
                .column(&c.column.column)
                .ok_or_else(|| ExecError::MissingColumn(c.column.clone()))?;
            cols.push((int_values(col, &c.column)?, &c.cmp));
        }
        let matching: HashSet<i64> = (0..other.row_count())
            .filter(|&r| cols.iter().all(|(v, cmp)| v[r].is_some_and(|x| cmp.holds(x))))
            .filter_map(|r| keys[r])
            .collect();
        let own = view.require(ACCIDENT_KEY)?;
        let own = int_values(own, &ColumnRef::new(view.name(), ACCIDENT_KEY))?;
        for (k, key) in keep.iter_mut().zip(own) {
            *k &= key.is_some_and(|x| matching.contains(&x));
        }
    }
    let rows: Vec<usize> = keep
        .iter()
        .enumerate()
        .filter_map(|(i, k)| k.then_some(i))
        .collect();
    Ok(view.select_rows(&rows))
}

fn int_values<'t>(
    col: &'t crate::table::Column,
    r: &ColumnRef,
) -> Result<&'t [Option<i64>], ExecError> {
    col.ints().ok_or_else(|| ExecError::TypeMismatch {
        method: format!("filter on {r}"),
        expected: "integer column",
        found: "text column",
    })
}

// ---- interpreter --------------------------------------------------------

#[derive(Debug, Clone)]
enum Value {
    Text(String),
    Int(i64),
    Table,
    Column { r: ColumnRef, values: Vec<i64> },
    Counts { r: ColumnRef, counts: BTreeMap<i64, u64> },
    Result(ResultValue),
}

impl Value {
    fn name(&self) -> &'static str {
        match self {
            Value::Text(_) => "text",
            Value::Int(_) => "integer",
            Value::Table => "table",
            Value::Column { .. } => "column",
            Value::Counts { .. } => "counts",
            Value::Result(_) => "result",
        }
    }
}

struct Context<'a> {
    view: &'a Table,
    target: &'a str,
    catalog: &'a MetadataCatalog,
    total_rows: u64,
}

impl Context<'_> {
    fn eval(&self, node: &AstNode) -> Result<Value, ExecError> {
        match node {
            AstNode::CommandDef { body, .. } => self.eval(body),
            AstNode::Return(inner) => self.eval(inner),
            AstNode::Param(p) => Err(ExecError::UnboundParam(p.clone())),
            AstNode::Literal(Literal::Int(i)) => Ok(Value::Int(*i)),
            AstNode::Literal(Literal::Text(s)) => {
                if s == self.target {
                    Ok(Value::Table)
                } else {
                    Ok(Value::Text(s.clone()))
                }
            }
            AstNode::ColumnSelect { table, column } => {
                let _table = self.eval(table)?;
                let name = match self.eval(column)? {
                    Value::Text(s) => s,
                    other => {
                        return Err(ExecError::TypeMismatch {
                            method: "select".into(),
                            expected: "column name",
                            found: other.name(),
                        })
                    }
                };
                let r = match name.split_once('.') {
                    Some((t, c)) => ColumnRef::new(t, c),
                    None => ColumnRef::new(self.target, name),
                };
                let col = self
                    .view
                    .column_from(&r.table, &r.column)
                    .ok_or_else(|| ExecError::MissingColumn(r.clone()))?;
                let values = int_values(col, &r)?.iter().map(|v| v.expect("missing values dropped")).collect();
                Ok(Value::Column { r, values })
            }
            AstNode::Call {
                method,
                receiver,
                args,
            } => {
                let recv = self.eval(receiver)?;
                let args = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
                self.call(method, recv, args)
            }
        }
    }

    fn call(&self, method: &str, recv: Value, args: Vec<Value>) -> Result<Value, ExecError> {
        let mismatch = |expected: &'static str, found: &Value| ExecError::TypeMismatch {
            method: method.to_string(),
            expected,
            found: found.name(),
        };
        match method {
            "value_counts" => match recv {
                Value::Column { r, values } => Ok(Value::Counts {
                    r,
                    counts: value_counts(&values),
                }),
                other => Err(mismatch("column", &other)),
            },
            "sort_keys" => match recv {
                v @ Value::Counts { .. } => Ok(v),
                other => Err(mismatch("counts", &other)),
            },
            "argmax_key" | "argmin_key" => match recv {
                Value::Counts { r, counts } => {
                    let pick = if method == "argmax_key" {
                        argmax_key(&counts)
                    } else {
                        argmin_key(&counts)
                    };
                    let (code, count) = pick.ok_or_else(|| ExecError::NoValues(r.clone()))?;
                    Ok(Value::Result(ResultValue::Scalar {
                        code: Some(code),
                        label: self.label(&r, code),
                        count,
                        total: counts.values().sum(),
                    }))
                }
                other => Err(mismatch("counts", &other)),
            },
            "normalize" => match recv {
                Value::Counts { r, counts } => Ok(Value::Result(self.distribution(r, &counts, true))),
                other => Err(mismatch("counts", &other)),
            },
            "trend" => match recv {
                Value::Counts { r, counts } => {
                    let points: Vec<SeriesPoint> = counts
                        .iter()
                        .map(|(&year, &count)| SeriesPoint { year, count })
                        .collect();
                    let slope = ols_slope(&points);
                    Ok(Value::Result(ResultValue::Series {
                        column: r,
                        points,
                        slope,
                        direction: direction_of(slope),
                    }))
                }
                other => Err(mismatch("counts", &other)),
            },
            "describe" => match recv {
                Value::Column { r, values } => {
                    let summary = describe_numeric(&values).ok_or_else(|| ExecError::NoValues(r.clone()))?;
                    Ok(Value::Result(ResultValue::Summary { column: r, summary }))
                }
                other => Err(mismatch("column", &other)),
            },
            "crosstab" => {
                let (Value::Column { r: ra, values: a }, Some(Value::Column { r: rb, values: b })) =
                    (&recv, args.first())
                else {
                    return Err(mismatch("two columns", &recv));
                };
                let (rows, cols, counts) = crosstab(a, b);
                let entries = |r: &ColumnRef, keys: &[i64], totals: Vec<u64>| {
                    keys.iter()
                        .zip(totals)
                        .map(|(&code, count)| DistEntry {
                            code,
                            label: self.label(r, code),
                            count,
                        })
                        .collect::<Vec<_>>()
                };
                let row_totals = counts.iter().map(|row| row.iter().sum()).collect();
                let col_totals = (0..cols.len())
                    .map(|j| counts.iter().map(|row| row[j]).sum())
                    .collect();
                Ok(Value::Result(ResultValue::Crosstab {
                    row_column: ra.clone(),
                    col_column: rb.clone(),
                    rows: entries(ra, &rows, row_totals),
                    cols: entries(rb, &cols, col_totals),
                    counts,
                    total: a.len() as u64,
                }))
            }
            "row_count" => match recv {
                Value::Table => Ok(Value::Result(ResultValue::Scalar {
                    code: None,
                    label: String::new(),
                    count: self.view.row_count() as u64,
                    total: self.total_rows,
                })),
                other => Err(mismatch("table", &other)),
            },
            "head" => match (recv, args.first()) {
                (Value::Table, Some(Value::Int(n))) => {
                    let n = (*n).max(0) as usize;
                    let shown: Vec<usize> = (0..self.view.row_count().min(n)).collect();
                    let columns: Vec<_> = self.view.columns().iter().map(|c| c.name.clone()).collect();
                    let rows = shown
                        .iter()
                        .map(|&r| self.view.columns().iter().map(|c| c.cell(r)).collect())
                        .collect();
                    Ok(Value::Result(ResultValue::Preview {
                        columns,
                        rows,
                        total: self.view.row_count() as u64,
                    }))
                }
                (other, _) => Err(mismatch("table and row count", &other)),
            },
            other => Err(ExecError::UnknownMethod(other.to_string())),
        }
    }

    fn label(&self, r: &ColumnRef, code: i64) -> String {
        self.catalog
            .label_of(&r.table, &r.column, code)
            .unwrap_or_else(|_| code.to_string())
    }

    fn distribution(&self, r: ColumnRef, counts: &BTreeMap<i64, u64>, normalized: bool) -> ResultValue {
        ResultValue::Distribution {
            entries: counts
                .iter()
                .map(|(&code, &count)| DistEntry {
                    code,
                    label: self.label(&r, code),
                    count,
                })
                .collect(),
            total: counts.values().sum(),
            column: r,
            normalized,
        }
    }
}

// ---- kernels ------------------------------------------------------------

pub fn value_counts(values: &[i64]) -> BTreeMap<i64, u64> {
    let mut counts = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    counts
}

/// Most frequent key; ties go to the smallest key.
pub fn argmax_key(counts: &BTreeMap<i64, u64>) -> Option<(i64, u64)> {
    let mut best: Option<(i64, u64)> = None;
    for (&k, &n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((k, n));
        }
    }
    best
}

/// Least frequent key; ties go to the smallest key.
pub fn argmin_key(counts: &BTreeMap<i64, u64>) -> Option<(i64, u64)> {
    let mut best: Option<(i64, u64)> = None;
    for (&k, &n) in counts {
        if best.is_none_or(|(_, m)| n < m) {
            best = Some((k, n));
        }
    }
    best
}

/// Least-squares slope of count against year.
pub fn ols_slope(points: &[SeriesPoint]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.year as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.count as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in points {
        let dx = p.year as f64 - mx;
        sxy += dx * (p.count as f64 - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn direction_of(slope: f64) -> Direction {
    if slope.abs() < STABLE_SLOPE {
        Direction::Stable
    } else if slope < 0.0 {
        Direction::Decreasing
    } else {
        Direction::Increasing
    }
}

pub fn describe_numeric(values: &[i64]) -> Option<NumericSummary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = sorted.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    Some(NumericSummary {
        count: sorted.len() as u64,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        mean,
        median: sorted[(sorted.len() - 1) / 2],
        std: var.sqrt(),
    })
}

/// Contingency counts with row and column keys in ascending order.
pub fn crosstab(a: &[i64], b: &[i64]) -> (Vec<i64>, Vec<i64>, Vec<Vec<u64>>) {
    let rows: Vec<i64> = a.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let cols: Vec<i64> = b.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for (x, y) in a.iter().zip(b) {
        let i = rows.binary_search(x).expect("row key");
        let j = cols.binary_search(y).expect("col key");
        counts[i][j] += 1;
    }
    (rows, cols, counts)
}
