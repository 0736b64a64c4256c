//! Metadata catalog: column descriptions, codebooks, synonyms and NA codes.
//!
//! The catalog is a TOML document with one `[[table]]` record per dataset and
//! one `[[column]]` record per column. [`MetadataCatalog::to_canonical_string`]
//! produces the exact layout of the shipped `catalog/baac.toml`, so
//! `load → serialize` is the identity on canonical files.
//!
//! Column record fields:
//!
//! | field         | required | meaning                                             |
//! |---------------|----------|-----------------------------------------------------|
//! | `table`       | yes      | owning table                                        |
//! | `column`      | yes      | column identifier as it appears in the CSV header   |
//! | `description` | yes      | free text                                           |
//! | `type`        | yes      | `integer-code`, `integer` or `text`                 |
//! | `na_codes`    | no       | codes normalized to missing at load; default `[-1]` |
//! | `exposed`     | no       | query-exposed (default `true`)                      |
//! | `bare_labels` | no       | labels match as conditions without the column name  |
//! | `synonyms`    | no       | English query terms; the first is the display name  |
//! | `codebook`    | no       | `{ code, label, aliases? }` entries                 |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{phrase_key, squash};

/// The catalog shipped with the repository.
pub const SHIPPED_CATALOG: &str = include_str!("../../../catalog/baac.toml");

pub const DEFAULT_NA_CODES: [i64; 1] = [-1];

/// Exact synonym (or identifier) match.
pub const EXACT_SCORE: f64 = 1.0;
/// Stem-normalized or prefix match.
pub const STEM_SCORE: f64 = 0.8;

const MIN_PREFIX_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("duplicate column {table}.{column}")]
    DuplicateColumn { table: String, column: String },
    #[error("duplicate table {0}")]
    DuplicateTable(String),
    #[error("column {table}.{column} references an undeclared table")]
    UnknownTable { table: String, column: String },
    #[error("synonym {term:?} maps to both {first} and {second}")]
    SynonymCollision {
        term: String,
        first: ColumnRef,
        second: ColumnRef,
    },
    #[error("{table}.{column}: code {code} is both a codebook key and an NA code")]
    CodebookNaOverlap {
        table: String,
        column: String,
        code: i64,
    },
    #[error("{table}.{column} is query-exposed but declares no synonyms")]
    MissingSynonyms { table: String, column: String },
    #[error("unknown column {0}")]
    UnknownColumn(ColumnRef),
    #[error("io error reading catalog: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnType {
    IntegerCode,
    Integer,
    Text,
}

impl ColumnType {
    pub fn is_integer(self) -> bool {
        matches!(self, ColumnType::IntegerCode | ColumnType::Integer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::IntegerCode => "integer-code",
            ColumnType::Integer => "integer",
            ColumnType::Text => "text",
        }
    }
}

/// A fully qualified column reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub table: String,
    pub column: String,
    pub description: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    pub codebook: BTreeMap<i64, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_aliases: BTreeMap<i64, Vec<String>>,
    pub synonyms: Vec<String>,
    pub na_codes: BTreeSet<i64>,
    pub exposed: bool,
    pub bare_labels: bool,
}

impl ColumnMeta {
    pub fn column_ref(&self) -> ColumnRef {
        ColumnRef::new(&self.table, &self.column)
    }

    /// Name used when talking about the column: its first synonym, or the
    /// identifier when none is declared.
    pub fn display_name(&self) -> &str {
        self.synonyms.first().map(String::as_str).unwrap_or(&self.column)
    }

    pub fn label(&self, code: i64) -> String {
        self.codebook
            .get(&code)
            .cloned()
            .unwrap_or_else(|| code.to_string())
    }

    /// Every surface form of the column: identifier plus declared synonyms.
    fn terms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.column.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub description: String,
    /// Plural noun for one row ("accidents", "road users").
    pub unit: String,
    pub synonyms: Vec<String>,
}

/// A codebook label (or alias) reachable from a phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHit {
    pub column: ColumnRef,
    pub code: i64,
}

#[derive(Debug, Clone)]
pub struct MetadataCatalog {
    pub version: String,
    pub default_table: String,
    pub featured: Vec<ColumnRef>,
    pub tables: Vec<TableMeta>,
    pub columns: Vec<ColumnMeta>,
    by_ref: HashMap<(String, String), usize>,
    exact: HashMap<String, Vec<usize>>,
    stemmed: HashMap<String, Vec<usize>>,
    labels: HashMap<String, Vec<(usize, i64)>>,
    table_terms: HashMap<String, usize>,
}

// ---- document model -------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDoc {
    version: String,
    default_table: String,
    #[serde(default)]
    featured: Vec<String>,
    #[serde(default)]
    table: Vec<TableDoc>,
    #[serde(default)]
    column: Vec<ColumnDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableDoc {
    name: String,
    description: String,
    unit: String,
    #[serde(default)]
    synonyms: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnDoc {
    table: String,
    column: String,
    description: String,
    #[serde(rename = "type")]
    ty: ColumnType,
    na_codes: Option<Vec<i64>>,
    #[serde(default = "yes")]
    exposed: bool,
    #[serde(default)]
    bare_labels: bool,
    #[serde(default)]
    synonyms: Vec<String>,
    #[serde(default)]
    codebook: Vec<CodeDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeDoc {
    code: i64,
    label: String,
    #[serde(default)]
    aliases: Vec<String>,
}

fn yes() -> bool {
    true
}

/// Reads and validates a catalog document.
pub fn load_catalog(mut source: impl Read) -> Result<MetadataCatalog, CatalogError> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| CatalogError::Io(e.to_string()))?;
    MetadataCatalog::from_toml(&text)
}

impl MetadataCatalog {
    pub fn shipped() -> MetadataCatalog {
        MetadataCatalog::from_toml(SHIPPED_CATALOG).expect("shipped catalog is valid")
    }

    pub fn from_toml(text: &str) -> Result<MetadataCatalog, CatalogError> {
        let doc: CatalogDoc = toml::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        let tables = doc
            .table
            .into_iter()
            .map(|t| TableMeta {
                name: t.name,
                description: t.description,
                unit: t.unit,
                synonyms: dedup_lower(t.synonyms),
            })
            .collect();
        let columns = doc
            .column
            .into_iter()
            .map(|c| {
                let mut codebook = BTreeMap::new();
                let mut label_aliases = BTreeMap::new();
                for entry in c.codebook {
                    if !entry.aliases.is_empty() {
                        label_aliases.insert(entry.code, dedup_lower(entry.aliases));
                    }
                    codebook.insert(entry.code, entry.label);
                }
                ColumnMeta {
                    table: c.table,
                    column: c.column,
                    description: c.description,
                    ty: c.ty,
                    codebook,
                    label_aliases,
                    synonyms: dedup_lower(c.synonyms),
                    na_codes: c
                        .na_codes
                        .unwrap_or_else(|| DEFAULT_NA_CODES.to_vec())
                        .into_iter()
                        .collect(),
                    exposed: c.exposed,
                    bare_labels: c.bare_labels,
                }
            })
            .collect();
        let featured = doc
            .featured
            .iter()
            .map(|f| match f.split_once('.') {
                Some((t, c)) => Ok(ColumnRef::new(t, c)),
                None => Err(CatalogError::Parse(format!(
                    "featured entry {f:?} is not table.column"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        MetadataCatalog::build(doc.version, doc.default_table, featured, tables, columns)
    }

    /// Validates the parts and builds the lookup indexes.
    pub fn build(
        version: String,
        default_table: String,
        featured: Vec<ColumnRef>,
        tables: Vec<TableMeta>,
        columns: Vec<ColumnMeta>,
    ) -> Result<MetadataCatalog, CatalogError> {
        let mut table_names = BTreeSet::new();
        for t in &tables {
            if !table_names.insert(t.name.clone()) {
                return Err(CatalogError::DuplicateTable(t.name.clone()));
            }
        }

        let mut by_ref = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            if !table_names.contains(&c.table) {
                return Err(CatalogError::UnknownTable {
                    table: c.table.clone(),
                    column: c.column.clone(),
                });
            }
            if by_ref.insert((c.table.clone(), c.column.clone()), i).is_some() {
                return Err(CatalogError::DuplicateColumn {
                    table: c.table.clone(),
                    column: c.column.clone(),
                });
            }
            if let Some(code) = c.codebook.keys().find(|k| c.na_codes.contains(k)) {
                return Err(CatalogError::CodebookNaOverlap {
                    table: c.table.clone(),
                    column: c.column.clone(),
                    code: *code,
                });
            }
            if c.exposed && c.synonyms.is_empty() {
                return Err(CatalogError::MissingSynonyms {
                    table: c.table.clone(),
                    column: c.column.clone(),
                });
            }
        }
        if !table_names.contains(&default_table) {
            return Err(CatalogError::Parse(format!(
                "default_table {default_table:?} is not declared"
            )));
        }
        for f in &featured {
            if !by_ref.contains_key(&(f.table.clone(), f.column.clone())) {
                return Err(CatalogError::UnknownColumn(f.clone()));
            }
        }

        // Term indexes. A normalized phrase may be shared only by same-named
        // columns through their identifiers (the Num_Acc join key).
        let mut exact: HashMap<String, Vec<usize>> = HashMap::new();
        let mut stemmed: HashMap<String, Vec<usize>> = HashMap::new();
        let mut owner: HashMap<String, (usize, bool)> = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            for (k, term) in c.terms().enumerate() {
                let is_identifier = k == 0;
                let key = phrase_key(term);
                if key.is_empty() {
                    continue;
                }
                match owner.get(&key) {
                    Some(&(j, prev_ident)) if j != i => {
                        let same_ident = is_identifier
                            && prev_ident
                            && columns[j].column == c.column;
                        if !same_ident {
                            return Err(CatalogError::SynonymCollision {
                                term: term.to_lowercase(),
                                first: columns[j].column_ref(),
                                second: c.column_ref(),
                            });
                        }
                    }
                    _ => {
                        owner.insert(key.clone(), (i, is_identifier));
                    }
                }
                push_unique(exact.entry(squash(term)).or_default(), i);
                push_unique(stemmed.entry(key).or_default(), i);
            }
        }

        let mut labels: HashMap<String, Vec<(usize, i64)>> = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            for (code, label) in &c.codebook {
                let aliases = c.label_aliases.get(code).into_iter().flatten();
                for form in std::iter::once(label).chain(aliases) {
                    let key = phrase_key(form);
                    if !key.is_empty() {
                        let hits = labels.entry(key).or_default();
                        if !hits.contains(&(i, *code)) {
                            hits.push((i, *code));
                        }
                    }
                }
            }
        }

        let mut table_terms = HashMap::new();
        for (i, t) in tables.iter().enumerate() {
            for term in std::iter::once(&t.name).chain(&t.synonyms) {
                table_terms.insert(phrase_key(term), i);
            }
        }

        let catalog = MetadataCatalog {
            version,
            default_table,
            featured,
            tables,
            columns,
            by_ref,
            exact,
            stemmed,
            labels,
            table_terms,
        };
        catalog.check_labels()?;
        Ok(catalog)
    }

    /// Exhaustive scan: no codebook label or alias may resolve to a column
    /// other than its own.
    fn check_labels(&self) -> Result<(), CatalogError> {
        for c in &self.columns {
            for (code, label) in &c.codebook {
                let aliases = c.label_aliases.get(code).into_iter().flatten();
                for form in std::iter::once(label).chain(aliases) {
                    if let Some((other, _)) = self
                        .resolve_term(form)
                        .into_iter()
                        .find(|(m, _)| m.table != c.table || m.column != c.column)
                    {
                        return Err(CatalogError::SynonymCollision {
                            term: form.to_lowercase(),
                            first: c.column_ref(),
                            second: other.column_ref(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnMeta> {
        self.by_ref
            .get(&(table.to_string(), column.to_string()))
            .map(|&i| &self.columns[i])
    }

    pub fn column_by_ref(&self, r: &ColumnRef) -> Option<&ColumnMeta> {
        self.column(&r.table, &r.column)
    }

    pub fn table(&self, name: &str) -> Option<&TableMeta> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn columns_of<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a ColumnMeta> + 'a {
        self.columns.iter().filter(move |c| c.table == table)
    }

    /// Candidate columns for a term, best first. Exact synonym or identifier
    /// match scores [`EXACT_SCORE`]; equality after stemming and stop-word
    /// removal, or a single-word prefix of a single-word synonym, scores
    /// [`STEM_SCORE`]. Ties are ordered by (table, column).
    pub fn resolve_term(&self, term: &str) -> Vec<(&ColumnMeta, f64)> {
        let mut scores: BTreeMap<(String, String), f64> = BTreeMap::new();
        let mut bump = |i: usize, s: f64| {
            let c = &self.columns[i];
            let e = scores.entry((c.table.clone(), c.column.clone())).or_insert(0.0);
            if s > *e {
                *e = s;
            }
        };

        let squashed = squash(term);
        if squashed.is_empty() {
            return Vec::new();
        }
        for &i in self.exact.get(&squashed).into_iter().flatten() {
            bump(i, EXACT_SCORE);
        }
        let key = phrase_key(term);
        if !key.is_empty() {
            for &i in self.stemmed.get(&key).into_iter().flatten() {
                bump(i, STEM_SCORE);
            }
        }
        if !squashed.contains(' ') && squashed.chars().count() >= MIN_PREFIX_LEN {
            for (i, c) in self.columns.iter().enumerate() {
                let hit = c.terms().any(|t| {
                    let t = t.to_lowercase();
                    !t.contains(' ') && t.len() > squashed.len() && t.starts_with(&squashed)
                });
                if hit {
                    bump(i, STEM_SCORE);
                }
            }
        }

        let mut out: Vec<(&ColumnMeta, f64)> = scores
            .into_iter()
            .map(|((t, c), s)| (self.column(&t, &c).expect("indexed column"), s))
            .collect();
        out.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| (&a.0.table, &a.0.column).cmp(&(&b.0.table, &b.0.column)))
        });
        out
    }

    /// Columns whose identifier or synonym normalizes to `key` exactly.
    pub fn columns_for_key(&self, key: &str) -> Vec<&ColumnMeta> {
        self.stemmed
            .get(key)
            .into_iter()
            .flatten()
            .map(|&i| &self.columns[i])
            .collect()
    }

    /// Codebook label (or its alias) for a phrase key, across all columns.
    pub fn label_hits(&self, key: &str) -> Vec<LabelHit> {
        self.labels
            .get(key)
            .into_iter()
            .flatten()
            .map(|&(i, code)| LabelHit {
                column: self.columns[i].column_ref(),
                code,
            })
            .collect()
    }

    /// Table named by a phrase key (table name or table synonym).
    pub fn table_for_term(&self, key: &str) -> Option<&TableMeta> {
        self.table_terms.get(key).map(|&i| &self.tables[i])
    }

    pub fn label_of(&self, table: &str, column: &str, code: i64) -> Result<String, CatalogError> {
        self.column(table, column)
            .map(|c| c.label(code))
            .ok_or_else(|| CatalogError::UnknownColumn(ColumnRef::new(table, column)))
    }

    /// Canonical TOML rendering; stable across runs and diff-friendly.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version = {}", quote(&self.version));
        let _ = writeln!(out, "default_table = {}", quote(&self.default_table));
        let featured: Vec<String> = self.featured.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(out, "featured = {}", string_array(&featured));
        for t in &self.tables {
            out.push_str("\n[[table]]\n");
            let _ = writeln!(out, "name = {}", quote(&t.name));
            let _ = writeln!(out, "description = {}", quote(&t.description));
            let _ = writeln!(out, "unit = {}", quote(&t.unit));
            if !t.synonyms.is_empty() {
                let _ = writeln!(out, "synonyms = {}", string_array(&t.synonyms));
            }
        }
        for c in &self.columns {
            out.push_str("\n[[column]]\n");
            let _ = writeln!(out, "table = {}", quote(&c.table));
            let _ = writeln!(out, "column = {}", quote(&c.column));
            let _ = writeln!(out, "description = {}", quote(&c.description));
            let _ = writeln!(out, "type = {}", quote(c.ty.as_str()));
            let default_na: BTreeSet<i64> = DEFAULT_NA_CODES.into_iter().collect();
            if c.ty == ColumnType::IntegerCode || c.na_codes != default_na {
                let codes: Vec<String> = c.na_codes.iter().map(i64::to_string).collect();
                let _ = writeln!(out, "na_codes = [{}]", codes.join(", "));
            }
            if !c.exposed {
                out.push_str("exposed = false\n");
            }
            if c.bare_labels {
                out.push_str("bare_labels = true\n");
            }
            if !c.synonyms.is_empty() {
                let _ = writeln!(out, "synonyms = {}", string_array(&c.synonyms));
            }
            if !c.codebook.is_empty() {
                out.push_str("codebook = [\n");
                for (code, label) in &c.codebook {
                    let _ = write!(out, "  {{ code = {code}, label = {}", quote(label));
                    if let Some(aliases) = c.label_aliases.get(code) {
                        let _ = write!(out, ", aliases = {}", string_array(aliases));
                    }
                    out.push_str(" },\n");
                }
                out.push_str("]\n");
            }
        }
        out
    }
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn string_array(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| quote(s)).collect();
    format!("[{}]", quoted.join(", "))
}

fn dedup_lower(items: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(items.len());
    for item in items {
        let item = squash(&item);
        if !item.is_empty() && !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

fn push_unique(v: &mut Vec<usize>, i: usize) {
    if !v.contains(&i) {
        v.push(i);
    }
}
