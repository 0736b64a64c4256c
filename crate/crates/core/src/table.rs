//! Immutable in-memory tables loaded from delimiter-separated files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ColumnMeta, ColumnType, MetadataCatalog};

/// Join key shared by every BAAC table.
pub const ACCIDENT_KEY: &str = "Num_Acc";

const DELIMITERS: [u8; 3] = [b',', b';', b'\t'];
const SNIFF_LINES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("unknown column {column} in {table}")]
    UnknownColumn { table: String, column: String },
    #[error("line {line}, column {column}: {reason} ({value:?})")]
    TypeViolation {
        line: u64,
        column: String,
        value: String,
        reason: String,
    },
    #[error("source is empty")]
    EmptySource,
    #[error("{rejected} of {data_lines} lines rejected, cap is {allowed}")]
    TooManyRejections {
        rejected: usize,
        allowed: usize,
        data_lines: usize,
    },
    #[error("duplicate column {0}")]
    DuplicateColumn(String),
    #[error("column {column} has {len} values, expected {expected}")]
    RaggedColumn {
        column: String,
        len: usize,
        expected: usize,
    },
    #[error("column {column} of {table} holds {found}, expected integers")]
    NotInteger {
        table: String,
        column: String,
        found: &'static str,
    },
    #[error("read error: {0}")]
    Io(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        source: Box<TableError>,
    },
}

/// One cell as seen by callers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CellValue {
    Code(i64),
    Number(i64),
    Text(String),
    Missing,
}

impl CellValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Int(Vec<Option<i64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Int(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Int(v) => v[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Int(v) => ColumnData::Int(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    /// Table the column was loaded from; survives joins and renames.
    pub origin_table: String,
    /// Column identifier in the origin table.
    pub origin_column: String,
    pub ty: ColumnType,
    pub data: ColumnData,
}

impl Column {
    pub fn int(name: &str, origin: &str, ty: ColumnType, values: Vec<Option<i64>>) -> Column {
        Column {
            name: name.to_string(),
            origin_table: origin.to_string(),
            origin_column: name.to_string(),
            ty,
            data: ColumnData::Int(values),
        }
    }

    pub fn text(name: &str, origin: &str, values: Vec<Option<String>>) -> Column {
        Column {
            name: name.to_string(),
            origin_table: origin.to_string(),
            origin_column: name.to_string(),
            ty: ColumnType::Text,
            data: ColumnData::Text(values),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, row: usize) -> CellValue {
        match &self.data {
            ColumnData::Int(v) => match v[row] {
                None => CellValue::Missing,
                Some(x) if self.ty == ColumnType::IntegerCode => CellValue::Code(x),
                Some(x) => CellValue::Number(x),
            },
            ColumnData::Text(v) => match &v[row] {
                None => CellValue::Missing,
                Some(s) => CellValue::Text(s.clone()),
            },
        }
    }

    pub fn ints(&self) -> Option<&[Option<i64>]> {
        match &self.data {
            ColumnData::Int(v) => Some(v),
            ColumnData::Text(_) => None,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        self.data.is_missing(row)
    }
}

/// Immutable table. Cleaning and joining return new tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    name: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Table, TableError> {
        let row_count = columns.first().map(Column::len).unwrap_or(0);
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
            if c.len() != row_count {
                return Err(TableError::RaggedColumn {
                    column: c.name.clone(),
                    len: c.len(),
                    expected: row_count,
                });
            }
        }
        Ok(Table {
            name: name.into(),
            columns,
            row_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Looks a column up by where it came from, falling back to its current
    /// name (tables built by hand have origin == name).
    pub fn column_from(&self, table: &str, column: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.origin_table == table && c.origin_column == column)
            .or_else(|| (self.name == table).then(|| self.column(column)).flatten())
    }

    pub fn require(&self, name: &str) -> Result<&Column, TableError> {
        self.column(name).ok_or_else(|| TableError::UnknownColumn {
            table: self.name.clone(),
            column: name.to_string(),
        })
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<CellValue> {
        self.column(column).map(|c| c.cell(row))
    }

    /// New table holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            name: self.name.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    origin_table: c.origin_table.clone(),
                    origin_column: c.origin_column.clone(),
                    ty: c.ty,
                    data: c.data.select(rows),
                })
                .collect(),
            row_count: rows.len(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Table {
        self.name = name.into();
        self
    }
}

/// Named tables available to the execution engine.
#[derive(Debug, Clone, Default)]
pub struct TableSet {
    tables: BTreeMap<String, Arc<Table>>,
}

impl TableSet {
    pub fn new() -> TableSet {
        TableSet::default()
    }

    pub fn insert(&mut self, table: Table) {
        self.tables.insert(table.name().to_string(), Arc::new(table));
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Table>> {
        self.tables.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Table>> {
        self.tables.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

// ---- loading --------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Forces a delimiter instead of sniffing it from the header.
    pub delimiter: Option<u8>,
    /// Fraction of data lines that may be rejected before the load fails.
    pub max_reject_fraction: f64,
    /// Drop header columns missing from the catalog instead of failing.
    pub skip_unknown_columns: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: None,
            max_reject_fraction: 0.01,
            skip_unknown_columns: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    FieldCount { expected: usize, found: usize },
    NotAnInteger { column: String, value: String },
    UnknownCode { column: String, code: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based physical line number in the source.
    pub line: u64,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub table: Table,
    pub data_lines: usize,
    pub delimiter: u8,
    pub rejected: Vec<Rejection>,
    pub skipped_columns: Vec<String>,
}

/// Loads a table with default options, failing on any rejection beyond the cap.
pub fn load_table(
    source: impl Read,
    table_name: &str,
    catalog: &MetadataCatalog,
) -> Result<Table, TableError> {
    load_table_with(source, table_name, catalog, &LoadOptions::default()).map(|r| r.table)
}

pub fn load_table_with(
    mut source: impl Read,
    table_name: &str,
    catalog: &MetadataCatalog,
    options: &LoadOptions,
) -> Result<LoadReport, TableError> {
    let mut raw = Vec::new();
    source
        .read_to_end(&mut raw)
        .map_err(|e| TableError::Io(e.to_string()))?;
    let text = String::from_utf8_lossy(&raw);
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    if text.trim().is_empty() {
        return Err(TableError::EmptySource);
    }
    let delimiter = options.delimiter.unwrap_or_else(|| sniff_delimiter(text));

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TableError::Io(e.to_string()))?
        .clone();

    // (header index, catalog entry) for every kept column
    let mut layout: Vec<(usize, &ColumnMeta)> = Vec::new();
    let mut skipped_columns = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        match catalog.column(table_name, h) {
            Some(meta) => {
                if layout.iter().any(|(_, m)| m.column == meta.column) {
                    return Err(TableError::DuplicateColumn(h.to_string()));
                }
                layout.push((i, meta));
            }
            None if options.skip_unknown_columns => skipped_columns.push(h.to_string()),
            None => {
                return Err(TableError::UnknownColumn {
                    table: table_name.to_string(),
                    column: h.to_string(),
                })
            }
        }
    }

    let mut builders: Vec<ColumnData> = layout
        .iter()
        .map(|(_, m)| match m.ty {
            ColumnType::Text => ColumnData::Text(Vec::new()),
            _ => ColumnData::Int(Vec::new()),
        })
        .collect();
    let mut rejected = Vec::new();
    let mut data_lines = 0usize;
    let expected = headers.len();

    for record in reader.records() {
        let record = record.map_err(|e| TableError::Io(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        data_lines += 1;
        if record.len() != expected {
            rejected.push(Rejection {
                line,
                reason: RejectReason::FieldCount {
                    expected,
                    found: record.len(),
                },
            });
            continue;
        }
        match parse_row(&record, &layout) {
            Ok(cells) => {
                for (b, cell) in builders.iter_mut().zip(cells) {
                    match (b, cell) {
                        (ColumnData::Int(v), Parsed::Int(x)) => v.push(x),
                        (ColumnData::Text(v), Parsed::Text(s)) => v.push(s),
                        _ => unreachable!("builder and parse agree on column type"),
                    }
                }
            }
            Err(reason) => rejected.push(Rejection { line, reason }),
        }
    }

    let allowed = (options.max_reject_fraction * data_lines as f64).floor() as usize;
    if rejected.len() > allowed {
        return Err(match &rejected[0] {
            Rejection {
                line,
                reason: RejectReason::NotAnInteger { column, value },
            } => TableError::TypeViolation {
                line: *line,
                column: column.clone(),
                value: value.clone(),
                reason: "not an integer".into(),
            },
            Rejection {
                line,
                reason: RejectReason::UnknownCode { column, code },
            } => TableError::TypeViolation {
                line: *line,
                column: column.clone(),
                value: code.to_string(),
                reason: "code absent from codebook".into(),
            },
            _ => TableError::TooManyRejections {
                rejected: rejected.len(),
                allowed,
                data_lines,
            },
        });
    }

    let columns = layout
        .iter()
        .zip(builders)
        .map(|((_, meta), data)| Column {
            name: meta.column.clone(),
            origin_table: table_name.to_string(),
            origin_column: meta.column.clone(),
            ty: meta.ty,
            data,
        })
        .collect();
    Ok(LoadReport {
        table: Table::new(table_name, columns)?,
        data_lines,
        delimiter,
        rejected,
        skipped_columns,
    })
}

enum Parsed {
    Int(Option<i64>),
    Text(Option<String>),
}

fn parse_row(record: &csv::StringRecord, layout: &[(usize, &ColumnMeta)]) -> Result<Vec<Parsed>, RejectReason> {
    layout
        .iter()
        .map(|&(i, meta)| {
            let raw = record.get(i).unwrap_or("").trim();
            match meta.ty {
                ColumnType::Text => Ok(Parsed::Text((!raw.is_empty()).then(|| raw.to_string()))),
                ty => {
                    if raw.is_empty() {
                        return Ok(Parsed::Int(None));
                    }
                    let x: i64 = raw.parse().map_err(|_| RejectReason::NotAnInteger {
                        column: meta.column.clone(),
                        value: raw.to_string(),
                    })?;
                    if meta.na_codes.contains(&x) {
                        return Ok(Parsed::Int(None));
                    }
                    if ty == ColumnType::IntegerCode
                        && !meta.codebook.is_empty()
                        && !meta.codebook.contains_key(&x)
                    {
                        return Err(RejectReason::UnknownCode {
                            column: meta.column.clone(),
                            code: x,
                        });
                    }
                    Ok(Parsed::Int(Some(x)))
                }
            }
        })
        .collect()
}

/// Picks the delimiter whose field count is the same (and greater than one)
/// on the header and the first data lines. Comma wins ties.
pub fn sniff_delimiter(text: &str) -> u8 {
    let mut best: Option<(u8, usize)> = None;
    for &d in &DELIMITERS {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(d)
            .flexible(true)
            .has_headers(false)
            .from_reader(text.as_bytes());
        let mut counts = reader
            .records()
            .take(SNIFF_LINES)
            .filter_map(Result::ok)
            .map(|r| r.len());
        let Some(width) = counts.next() else { continue };
        if width > 1 && counts.all(|n| n == width) && best.is_none_or(|(_, w)| width > w) {
            best = Some((d, width));
        }
    }
    best.map(|(d, _)| d).unwrap_or(b',')
}

/// Loads `<dir>/<table>.csv` for every table in the catalog.
pub fn load_dir(
    dir: &Path,
    catalog: &MetadataCatalog,
    options: &LoadOptions,
) -> Result<Vec<LoadReport>, TableError> {
    let mut reports = Vec::new();
    for t in &catalog.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let in_file = |e: TableError| TableError::File {
            path: path.display().to_string(),
            source: Box::new(e),
        };
        let file = std::fs::File::open(&path).map_err(|e| in_file(TableError::Io(e.to_string())))?;
        reports.push(load_table_with(file, &t.name, catalog, options).map_err(in_file)?);
    }
    Ok(reports)
}

impl FromIterator<Table> for TableSet {
    fn from_iter<I: IntoIterator<Item = Table>>(iter: I) -> TableSet {
        let mut set = TableSet::new();
        for t in iter {
            set.insert(t);
        }
        set
    }
}

// ---- cleaning and joining ----------------------------------------------

/// Keeps the rows where `column` is present.
pub fn drop_missing(table: &Table, column: &str) -> Result<(Table, usize), TableError> {
    let col = table.require(column)?;
    let keep: Vec<usize> = (0..table.row_count()).filter(|&r| !col.is_missing(r)).collect();
    let removed = table.row_count() - keep.len();
    Ok((table.select_rows(&keep), removed))
}

/// Row pairs `(left, right)` of the inner join on the accident key, in left
/// order with right duplicates expanded in right order.
pub fn accident_join_pairs(left: &Table, right: &Table) -> Result<Vec<(usize, usize)>, TableError> {
    let lkeys = key_column(left)?;
    let rkeys = key_column(right)?;
    let mut index: HashMap<i64, Vec<usize>> = HashMap::new();
    for (r, k) in rkeys.iter().enumerate() {
        if let Some(k) = k {
            index.entry(*k).or_default().push(r);
        }
    }
    let mut pairs = Vec::new();
    for (l, k) in lkeys.iter().enumerate() {
        if let Some(rows) = k.and_then(|k| index.get(&k)) {
            pairs.extend(rows.iter().map(|&r| (l, r)));
        }
    }
    Ok(pairs)
}

/// Inner join on `Num_Acc`. Right columns whose names collide with a left
/// column are renamed `<right table>_<column>`; the right key is dropped.
pub fn join_on_accident(left: &Table, right: &Table) -> Result<Table, TableError> {
    let pairs = accident_join_pairs(left, right)?;
    let lrows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let rrows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let mut columns: Vec<Column> = left.select_rows(&lrows).columns;
    for c in right.select_rows(&rrows).columns {
        if c.name == ACCIDENT_KEY {
            continue;
        }
        let mut c = c;
        if columns.iter().any(|l| l.name == c.name) {
            c.name = format!("{}_{}", right.name(), c.name);
        }
        columns.push(c);
    }
    Table::new(format!("{}+{}", left.name(), right.name()), columns)
}

fn key_column(table: &Table) -> Result<&[Option<i64>], TableError> {
    let col = table.require(ACCIDENT_KEY)?;
    col.ints().ok_or_else(|| TableError::NotInteger {
        table: table.name().to_string(),
        column: ACCIDENT_KEY.to_string(),
        found: "text",
    })
}
