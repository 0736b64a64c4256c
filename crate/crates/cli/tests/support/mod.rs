//! Shared test helpers: fixture service construction and a nested-loop
//! reference implementation of every registry command, computed straight
//! from the raw fixture files.

#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Arc;

use cbi_cli::config;
use cbi_cli::scenario::{scenario_epoch, stepping_clock};
use cbi_core::engine::{DistEntry, ResultValue};
use cbi_core::{
    bind, builtin_registry, execute, Assistant, BoundValue, CellValue, ChatService, ColumnRef, ColumnType, Comparison,
    Condition, ExecError, MetadataCatalog, SessionStore,
};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixtures() -> PathBuf {
    repo_root().join("fixtures")
}

pub fn fixture_assistant() -> Assistant {
    config::assistant(&fixtures(), None).expect("fixture tables load")
}

/// A chat service over the fixtures with a one-second stepping clock.
pub fn fixture_service(log: &Path) -> ChatService {
    let store = SessionStore::open(log)
        .expect("open log")
        .with_clock(stepping_clock(scenario_epoch()));
    ChatService::new(Arc::new(fixture_assistant()), Arc::new(store))
}

pub mod http;

// ---- raw fixture access ------------------------------------------------

pub struct Raw {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Raw {
    pub fn read(name: &str) -> Raw {
        let path = fixtures().join(format!("{name}.csv"));
        let text = std::fs::read_to_string(&path).expect("fixture file");
        let first = text.lines().next().unwrap_or("");
        let delim = if first.matches(';').count() > first.matches(',').count() { b';' } else { b',' };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delim)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = rdr.headers().expect("header").iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.expect("record").iter().map(|s| s.trim().to_string()).collect())
            .collect();
        Raw {
            name: name.to_string(),
            header,
            rows,
        }
    }

    pub fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).expect("column in header")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

/// All four fixture tables plus the NA rules of the shipped catalog.
pub struct Reference {
    pub catalog: MetadataCatalog,
    pub raw: BTreeMap<String, Raw>,
    /// `(left, right)` to, per left row, the right rows sharing its key.
    matches: RefCell<BTreeMap<(String, String), Rc<Vec<Vec<usize>>>>>,
    parsed: RefCell<BTreeMap<(String, String), Rc<Vec<Option<i64>>>>>,
}

type Tuple = Vec<(String, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Result(ResultValue),
    NoValues,
    EmptyAfterFilter,
}

impl Reference {
    pub fn load() -> Reference {
        let catalog = MetadataCatalog::shipped();
        let raw = catalog
            .tables
            .iter()
            .map(|t| (t.name.clone(), Raw::read(&t.name)))
            .collect();
        Reference {
            catalog,
            raw,
            matches: RefCell::default(),
            parsed: RefCell::default(),
        }
    }

    /// Integer value of a cell, `None` for blanks and declared NA codes.
    pub fn int(&self, table: &str, row: usize, column: &str) -> Option<i64> {
        let k = (table.to_string(), column.to_string());
        if let Some(v) = self.parsed.borrow().get(&k) {
            return v[row];
        }
        let v: Vec<Option<i64>> = (0..self.raw[table].len()).map(|r| self.parse_int(table, r, column)).collect();
        let out = v[row];
        self.parsed.borrow_mut().insert(k, Rc::new(v));
        out
    }

    fn parse_int(&self, table: &str, row: usize, column: &str) -> Option<i64> {
        let raw = &self.raw[table];
        let s = &raw.rows[row][raw.col(column)];
        if s.is_empty() {
            return None;
        }
        let v: i64 = s.parse().ok()?;
        let meta = self.catalog.column(table, column)?;
        (!meta.na_codes.contains(&v)).then_some(v)
    }

    pub fn cell(&self, table: &str, row: usize, column: &str) -> CellValue {
        let raw = &self.raw[table];
        let s = &raw.rows[row][raw.col(column)];
        let meta = self.catalog.column(table, column).expect("catalog column");
        match meta.ty {
            ColumnType::Text if s.is_empty() => CellValue::Missing,
            ColumnType::Text => CellValue::Text(s.clone()),
            ColumnType::IntegerCode => self.int(table, row, column).map_or(CellValue::Missing, CellValue::Code),
            ColumnType::Integer => self.int(table, row, column).map_or(CellValue::Missing, CellValue::Number),
        }
    }

    fn key(&self, table: &str, row: usize) -> &str {
        let raw = &self.raw[table];
        &raw.rows[row][raw.col("Num_Acc")]
    }

    /// Nested-loop key matches between two tables, computed once per pair.
    fn matches(&self, left: &str, right: &str) -> Rc<Vec<Vec<usize>>> {
        let k = (left.to_string(), right.to_string());
        if let Some(m) = self.matches.borrow().get(&k) {
            return m.clone();
        }
        let m: Vec<Vec<usize>> = (0..self.raw[left].len())
            .map(|i| {
                (0..self.raw[right].len())
                    .filter(|&j| self.key(left, i) == self.key(right, j))
                    .collect()
            })
            .collect();
        let m = Rc::new(m);
        self.matches.borrow_mut().insert(k, m.clone());
        m
    }

    /// Nested-loop inner join of `target` with each further table, keyed on
    /// the accident number.
    fn view(&self, target: &str, others: &[String]) -> Vec<Tuple> {
        let mut view: Vec<Tuple> = (0..self.raw[target].len()).map(|i| vec![(target.to_string(), i)]).collect();
        for other in others {
            let m = self.matches(target, other);
            let mut next = Vec::new();
            for t in &view {
                for &j in &m[t[0].1] {
                    let mut u = t.clone();
                    u.push((other.clone(), j));
                    next.push(u);
                }
            }
            view = next;
        }
        view
    }

    fn value(&self, t: &Tuple, c: &ColumnRef) -> Option<i64> {
        let (_, row) = t.iter().find(|(name, _)| *name == c.table).expect("table in tuple");
        self.int(&c.table, *row, &c.column)
    }

    fn label(&self, c: &ColumnRef, code: i64) -> String {
        self.catalog
            .column(&c.table, &c.column)
            .and_then(|m| m.codebook.get(&code).cloned())
            .unwrap_or_else(|| code.to_string())
    }

    fn holds(&self, t: &Tuple, target: &str, cond: &Condition) -> bool {
        if t.iter().any(|(n, _)| *n == cond.column.table) {
            return self.value(t, &cond.column).is_some_and(|v| cond.cmp.holds(v));
        }
        let other = &cond.column.table;
        self.matches(target, other)[t[0].1]
            .iter()
            .any(|&j| self.int(other, j, &cond.column.column).is_some_and(|v| cond.cmp.holds(v)))
    }

    fn entries(&self, c: &ColumnRef, counts: &BTreeMap<i64, u64>) -> Vec<DistEntry> {
        counts
            .iter()
            .map(|(&code, &count)| DistEntry {
                code,
                label: self.label(c, code),
                count,
            })
            .collect()
    }

    /// Expected outcome of `command` under `bindings` and `conditions`.
    pub fn expect(
        &self,
        command: &str,
        bindings: &BTreeMap<String, BoundValue>,
        conditions: &[Condition],
    ) -> Expected {
        let target = match &bindings["target_table"] {
            BoundValue::Table(t) => t.clone(),
            BoundValue::Column(_) => panic!("table slot holds a column"),
        };
        let mut cols: Vec<ColumnRef> = Vec::new();
        for name in ["target_column", "year_column", "row_column", "col_column"] {
            if let Some(BoundValue::Column(c)) = bindings.get(name) {
                cols.push(c.clone());
            }
        }
        let mut others: Vec<String> = Vec::new();
        for c in &cols {
            if c.table != target && !others.contains(&c.table) {
                others.push(c.table.clone());
            }
        }
        let total_rows = self.raw[&target].len() as u64;
        let view: Vec<Tuple> = self
            .view(&target, &others)
            .into_iter()
            .filter(|t| conditions.iter().all(|c| self.holds(t, &target, c)))
            .collect();
        if command == "count" {
            return Expected::Result(ResultValue::Scalar {
                code: None,
                label: String::new(),
                count: view.len() as u64,
                total: total_rows,
            });
        }
        if view.is_empty() && !conditions.is_empty() {
            return Expected::EmptyAfterFilter;
        }
        let view: Vec<Tuple> = view
            .into_iter()
            .filter(|t| cols.iter().all(|c| self.value(t, c).is_some()))
            .collect();
        if view.is_empty() && !cols.is_empty() {
            return Expected::NoValues;
        }
        let tally = |c: &ColumnRef| {
            let mut m: BTreeMap<i64, u64> = BTreeMap::new();
            for t in &view {
                *m.entry(self.value(t, c).expect("present")).or_default() += 1;
            }
            m
        };
        let result = match command {
            "most_of" | "least_of" => {
                let c = &cols[0];
                let counts = tally(c);
                let extreme = if command == "most_of" {
                    counts.values().max()
                } else {
                    counts.values().min()
                }
                .copied()
                .expect("non-empty");
                let code = *counts.iter().find(|(_, &n)| n == extreme).expect("extreme").0;
                ResultValue::Scalar {
                    code: Some(code),
                    label: self.label(c, code),
                    count: extreme,
                    total: view.len() as u64,
                }
            }
            "distribution" | "share" => {
                let c = &cols[0];
                ResultValue::Distribution {
                    column: c.clone(),
                    entries: self.entries(c, &tally(c)),
                    total: view.len() as u64,
                    normalized: command == "share",
                }
            }
            "trend_by_year" => {
                let c = &cols[0];
                let counts = tally(c);
                let n = counts.len() as f64;
                let (mut sx, mut sy, mut sxy, mut sxx) = (0.0, 0.0, 0.0, 0.0);
                for (&x, &y) in &counts {
                    let (x, y) = (x as f64, y as f64);
                    sx += x;
                    sy += y;
                    sxy += x * y;
                    sxx += x * x;
                }
                let den = n * sxx - sx * sx;
                let slope = if counts.len() < 2 || den == 0.0 { 0.0 } else { (n * sxy - sx * sy) / den };
                let direction = if slope.abs() < 0.5 {
                    cbi_core::engine::Direction::Stable
                } else if slope < 0.0 {
                    cbi_core::engine::Direction::Decreasing
                } else {
                    cbi_core::engine::Direction::Increasing
                };
                ResultValue::Series {
                    column: c.clone(),
                    points: counts
                        .iter()
                        .map(|(&year, &count)| cbi_core::engine::SeriesPoint { year, count })
                        .collect(),
                    slope,
                    direction,
                }
            }
            "describe" => {
                let c = &cols[0];
                let vals: Vec<i64> = view.iter().map(|t| self.value(t, c).expect("present")).collect();
                let n = vals.len() as f64;
                let sum: f64 = vals.iter().map(|&v| v as f64).sum();
                let sq: f64 = vals.iter().map(|&v| (v as f64) * (v as f64)).sum();
                let mean = sum / n;
                // Lower middle element: the smallest value with at least
                // ceil(n/2) values at or below it.
                let need = vals.len().div_ceil(2);
                let median = *vals
                    .iter()
                    .filter(|&&m| vals.iter().filter(|&&v| v <= m).count() >= need)
                    .min()
                    .expect("non-empty");
                ResultValue::Summary {
                    column: c.clone(),
                    summary: cbi_core::engine::NumericSummary {
                        count: vals.len() as u64,
                        min: *vals.iter().min().expect("non-empty"),
                        max: *vals.iter().max().expect("non-empty"),
                        mean,
                        median,
                        std: (sq / n - mean * mean).max(0.0).sqrt(),
                    },
                }
            }
            "crosstab" => {
                let (r, c) = (&cols[0], bindings_col(bindings, "col_column"));
                let rows = tally(r);
                let colc = tally(&c);
                let mut pairs: BTreeMap<(i64, i64), u64> = BTreeMap::new();
                for t in &view {
                    let key = (self.value(t, r).expect("present"), self.value(t, &c).expect("present"));
                    *pairs.entry(key).or_default() += 1;
                }
                let counts = rows
                    .keys()
                    .map(|&a| colc.keys().map(|&b| pairs.get(&(a, b)).copied().unwrap_or(0)).collect())
                    .collect();
                ResultValue::Crosstab {
                    row_column: r.clone(),
                    col_column: c.clone(),
                    rows: self.entries(r, &rows),
                    cols: self.entries(&c, &colc),
                    counts,
                    total: view.len() as u64,
                }
            }
            "filter_preview" => {
                let raw = &self.raw[&target];
                ResultValue::Preview {
                    columns: raw.header.clone(),
                    rows: view
                        .iter()
                        .take(5)
                        .map(|t| raw.header.iter().map(|h| self.cell(&target, t[0].1, h)).collect())
                        .collect(),
                    total: view.len() as u64,
                }
            }
            other => panic!("no reference for {other}"),
        };
        Expected::Result(result)
    }
}

fn bindings_col(b: &BTreeMap<String, BoundValue>, name: &str) -> ColumnRef {
    match &b[name] {
        BoundValue::Column(c) => c.clone(),
        BoundValue::Table(t) => panic!("{name} holds table {t}"),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Equality with a relative tolerance on floating-point fields.
pub fn same(a: &ResultValue, b: &ResultValue) -> bool {
    match (a, b) {
        (
            ResultValue::Series {
                column: c1,
                points: p1,
                slope: s1,
                direction: d1,
            },
            ResultValue::Series {
                column: c2,
                points: p2,
                slope: s2,
                direction: d2,
            },
        ) => c1 == c2 && p1 == p2 && close(*s1, *s2) && d1 == d2,
        (ResultValue::Summary { column: c1, summary: x }, ResultValue::Summary { column: c2, summary: y }) => {
            c1 == c2
                && (x.count, x.min, x.max, x.median) == (y.count, y.min, y.max, y.median)
                && close(x.mean, y.mean)
                && (x.std - y.std).abs() < 1e-6
        }
        _ => a == b,
    }
}

#[derive(Debug)]
pub struct OracleCase {
    pub command: String,
    pub bindings: BTreeMap<String, BoundValue>,
    pub conditions: Vec<Condition>,
}

impl std::fmt::Display for OracleCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b: Vec<String> = self.bindings.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{}({})", self.command, b.join(", "))?;
        for c in &self.conditions {
            write!(f, " where {c}")?;
        }
        Ok(())
    }
}

/// Every registry command against every table and every column its slots
/// accept; `count` additionally under each single-code equality filter.
pub fn oracle_cases(catalog: &MetadataCatalog, reference: &Reference) -> Vec<OracleCase> {
    let registry = builtin_registry();
    let tables: Vec<String> = catalog.tables.iter().map(|t| t.name.clone()).collect();
    let columns = |accepts: &[ColumnType]| -> Vec<ColumnRef> {
        catalog
            .columns
            .iter()
            .filter(|c| c.column != "Num_Acc" && accepts.contains(&c.ty))
            .map(|c| c.column_ref())
            .collect()
    };
    let mut cases = Vec::new();
    for spec in registry.iter() {
        let col_slots: Vec<_> = spec.column_slots().collect();
        let table = |t: &str| (String::from("target_table"), BoundValue::Table(t.to_string()));
        match col_slots.as_slice() {
            [] => {
                for t in &tables {
                    cases.push(OracleCase {
                        command: spec.name.clone(),
                        bindings: BTreeMap::from([table(t)]),
                        conditions: Vec::new(),
                    });
                }
            }
            [one] => {
                for t in &tables {
                    for c in columns(&one.accepts) {
                        cases.push(OracleCase {
                            command: spec.name.clone(),
                            bindings: BTreeMap::from([table(t), (one.name.clone(), BoundValue::Column(c))]),
                            conditions: Vec::new(),
                        });
                    }
                }
            }
            [a, b] => {
                for r in columns(&a.accepts) {
                    for c in columns(&b.accepts) {
                        cases.push(OracleCase {
                            command: spec.name.clone(),
                            bindings: BTreeMap::from([
                                table(&r.table),
                                (a.name.clone(), BoundValue::Column(r.clone())),
                                (b.name.clone(), BoundValue::Column(c)),
                            ]),
                            conditions: Vec::new(),
                        });
                    }
                }
            }
            _ => panic!("unexpected slot layout for {}", spec.name),
        }
    }
    for t in &tables {
        for meta in catalog.columns.iter().filter(|c| c.ty == ColumnType::IntegerCode) {
            let present: BTreeSet<i64> = (0..reference.raw[&meta.table].len())
                .filter_map(|r| reference.int(&meta.table, r, &meta.column))
                .collect();
            for code in present {
                cases.push(OracleCase {
                    command: "count".into(),
                    bindings: BTreeMap::from([(String::from("target_table"), BoundValue::Table(t.clone()))]),
                    conditions: vec![Condition {
                        column: meta.column_ref(),
                        cmp: Comparison::Eq(code),
                    }],
                });
            }
        }
    }
    cases
}

/// Runs every oracle case; returns (cases checked, discrepancies).
pub fn oracle_discrepancies(assistant: &Assistant) -> (usize, Vec<String>) {
    let reference = Reference::load();
    let cases = oracle_cases(&assistant.catalog, &reference);
    let mut bad = Vec::new();
    for case in &cases {
        let spec = assistant.registry.get(&case.command).expect("registry command");
        let bound = match bind(spec, &case.bindings, &assistant.catalog) {
            Ok(b) => b.with_conditions(case.conditions.clone()),
            Err(e) => {
                bad.push(format!("{case}: bind failed: {e}"));
                continue;
            }
        };
        let got = execute(&bound, &assistant.tables, &assistant.catalog);
        let want = reference.expect(&case.command, &case.bindings, &case.conditions);
        let ok = match (&got, &want) {
            (Ok(ex), Expected::Result(r)) => same(&ex.result, r),
            (Err(ExecError::NoValues(_)), Expected::NoValues) => true,
            (Err(ExecError::EmptyAfterFilter { .. }), Expected::EmptyAfterFilter) => true,
            _ => false,
        };
        if !ok {
            bad.push(format!("{case}: engine {got:?}, reference {want:?}"));
        }
    }
    (cases.len(), bad)
}
