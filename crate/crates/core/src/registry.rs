//! The closed set of exploration commands.
//!
//! Each [`CommandSpec`] pairs an abstract semantic tree with a trace table
//! that maps semantic slots onto tree nodes. Binding a command substitutes
//! the bound table and column names into the `Param` nodes the trace table
//! points at.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{call, def, param, ret, select, AstError, AstNode, Literal, TreePath};
use crate::catalog::{ColumnRef, ColumnType, MetadataCatalog};
use crate::text::phrase_key;

/// Trace-table key for the node computing the command's aggregation.
pub const AGGREGATION: &str = "aggregation";

/// Rows shown by `filter_preview`.
pub const PREVIEW_ROWS: i64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Table,
    Column,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotDecl {
    pub name: String,
    pub kind: SlotKind,
    /// Column types a column slot accepts.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub accepts: Vec<ColumnType>,
    /// Term whose resolved column is preferred for this slot.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

impl SlotDecl {
    fn table(name: &str) -> SlotDecl {
        SlotDecl {
            name: name.into(),
            kind: SlotKind::Table,
            accepts: Vec::new(),
            hint: None,
        }
    }

    fn column(name: &str, accepts: &[ColumnType]) -> SlotDecl {
        SlotDecl {
            name: name.into(),
            kind: SlotKind::Column,
            accepts: accepts.to_vec(),
            hint: None,
        }
    }

    fn hinted(mut self, hint: &str) -> SlotDecl {
        self.hint = Some(hint.into());
        self
    }

    pub fn accepts_type(&self, ty: ColumnType) -> bool {
        self.kind == SlotKind::Column && self.accepts.contains(&ty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultShape {
    Scalar,
    Distribution,
    Series,
    Crosstab,
    Summary,
    Preview,
}

/// Semantic slot → path of the tree node it governs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct TraceTable(pub BTreeMap<String, TreePath>);

impl TraceTable {
    pub fn get(&self, slot: &str) -> Option<&TreePath> {
        self.0.get(slot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandSpec {
    pub name: String,
    pub slots: Vec<SlotDecl>,
    pub tree: AstNode,
    pub trace: TraceTable,
    pub triggers: Vec<String>,
    pub answer_template: String,
    pub result_shape: ResultShape,
}

impl CommandSpec {
    pub fn slot(&self, name: &str) -> Option<&SlotDecl> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// The slot naming the table the command runs against.
    pub fn table_slot(&self) -> Option<&SlotDecl> {
        self.slots.iter().find(|s| s.kind == SlotKind::Table)
    }

    pub fn column_slots(&self) -> impl Iterator<Item = &SlotDecl> {
        self.slots.iter().filter(|s| s.kind == SlotKind::Column)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("{command}: invalid tree: {source}")]
    InvalidTree { command: String, source: AstError },
    #[error("{command}: slot {slot} has no trace entry")]
    MissingTrace { command: String, slot: String },
    #[error("{command}: trace entry {slot} addresses no node")]
    DanglingPath { command: String, slot: String },
    #[error("{command}: slot {slot} must address a parameter node")]
    SlotNotParam { command: String, slot: String },
    #[error("{command}: trace entry {slot} is not a declared slot")]
    UnknownTraceEntry { command: String, slot: String },
    #[error("trigger {phrase:?} is shared by {first} and {second}")]
    TriggerOverlap {
        phrase: String,
        first: String,
        second: String,
    },
    #[error("duplicate command {0}")]
    DuplicateCommand(String),
}

#[derive(Debug, Clone)]
pub struct Registry {
    commands: Vec<CommandSpec>,
}

impl Registry {
    /// Validates and wraps a command list.
    pub fn new(commands: Vec<CommandSpec>) -> Result<Registry, RegistryError> {
        let mut names = HashMap::new();
        let mut triggers: HashMap<String, &str> = HashMap::new();
        for c in &commands {
            if names.insert(c.name.as_str(), ()).is_some() {
                return Err(RegistryError::DuplicateCommand(c.name.clone()));
            }
            validate_spec(c)?;
            for t in &c.triggers {
                let key = phrase_key(t);
                if let Some(prev) = triggers.get(&key) {
                    if *prev != c.name {
                        return Err(RegistryError::TriggerOverlap {
                            phrase: t.clone(),
                            first: prev.to_string(),
                            second: c.name.clone(),
                        });
                    }
                }
                triggers.insert(key, &c.name);
            }
        }
        Ok(Registry { commands })
    }

    pub fn get(&self, name: &str) -> Option<&CommandSpec> {
        self.commands.iter().find(|c| c.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CommandSpec> {
        self.commands.iter()
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.commands.iter().position(|c| c.name == name)
    }
}

fn validate_spec(c: &CommandSpec) -> Result<(), RegistryError> {
    c.tree.validate().map_err(|source| RegistryError::InvalidTree {
        command: c.name.clone(),
        source,
    })?;
    for slot in &c.slots {
        let path = c.trace.get(&slot.name).ok_or_else(|| RegistryError::MissingTrace {
            command: c.name.clone(),
            slot: slot.name.clone(),
        })?;
        match c.tree.node_at(path) {
            None => {
                return Err(RegistryError::DanglingPath {
                    command: c.name.clone(),
                    slot: slot.name.clone(),
                })
            }
            Some(AstNode::Param(_)) => {}
            Some(_) => {
                return Err(RegistryError::SlotNotParam {
                    command: c.name.clone(),
                    slot: slot.name.clone(),
                })
            }
        }
    }
    for (key, path) in &c.trace.0 {
        if key != AGGREGATION && c.slot(key).is_none() {
            return Err(RegistryError::UnknownTraceEntry {
                command: c.name.clone(),
                slot: key.clone(),
            });
        }
        if c.tree.node_at(path).is_none() {
            return Err(RegistryError::DanglingPath {
                command: c.name.clone(),
                slot: key.clone(),
            });
        }
    }
    Ok(())
}

// ---- shipped commands -----------------------------------------------------

const COUNTABLE: &[ColumnType] = &[ColumnType::IntegerCode, ColumnType::Integer];
const NUMERIC: &[ColumnType] = &[ColumnType::Integer];

fn trace(entries: &[(&str, &[usize])]) -> TraceTable {
    TraceTable(
        entries
            .iter()
            .map(|(k, p)| (k.to_string(), p.to_vec()))
            .collect(),
    )
}

fn phrases(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// `value_counts` over `(select x y)` wrapped by `method`.
fn counted(name: &str, method: &str) -> AstNode {
    def(
        name,
        &["x", "y"],
        ret(call(
            method,
            call("value_counts", select(param("x"), param("y")), vec![]),
            vec![],
        )),
    )
}

const COUNTED_TRACE: &[(&str, &[usize])] = &[
    ("target_table", &[0, 0, 0, 0, 0]),
    ("target_column", &[0, 0, 0, 0, 1]),
    (AGGREGATION, &[0, 0]),
];

/// The nine shipped commands.
pub fn builtin_registry() -> Registry {
    let table = || SlotDecl::table("target_table");
    let commands = vec![
        CommandSpec {
            name: "most_of".into(),
            slots: vec![table(), SlotDecl::column("target_column", COUNTABLE)],
            tree: counted("most_of", "argmax_key"),
            trace: trace(COUNTED_TRACE),
            triggers: phrases(&[
                "most",
                "most accidents",
                "highest",
                "higher frequency",
                "high risk",
                "most common",
                "most frequent",
                "most often",
                "most dangerous",
                "riskiest",
                "maximum",
                "largest number",
                "highest number of accidents",
            ]),
            answer_template: "{Column} with the most {unit}{filter}: {label} ({count} of {total} {unit}, {pct}%)."
                .into(),
            result_shape: ResultShape::Scalar,
        },
        CommandSpec {
            name: "least_of".into(),
            slots: vec![table(), SlotDecl::column("target_column", COUNTABLE)],
            tree: counted("least_of", "argmin_key"),
            trace: trace(COUNTED_TRACE),
            triggers: phrases(&[
                "least",
                "fewest",
                "fewest accidents",
                "least accidents",
                "safest",
                "lowest",
                "least common",
                "rarest",
                "least dangerous",
                "minimum",
                "lowest number of accidents",
            ]),
            answer_template: "{Column} with the fewest {unit}{filter}: {label} ({count} of {total} {unit}, {pct}%)."
                .into(),
            result_shape: ResultShape::Scalar,
        },
        CommandSpec {
            name: "count".into(),
            slots: vec![table()],
            tree: def("count", &["x"], ret(call("row_count", param("x"), vec![]))),
            trace: trace(&[("target_table", &[0, 0, 0]), (AGGREGATION, &[0, 0])]),
            triggers: phrases(&[
                "how many",
                "number of accidents",
                "count",
                "total number",
                "how many accidents",
            ]),
            answer_template: "There are {count} {unit}{filter} (out of {total}).".into(),
            result_shape: ResultShape::Scalar,
        },
        CommandSpec {
            name: "distribution".into(),
            slots: vec![table(), SlotDecl::column("target_column", COUNTABLE)],
            tree: def(
                "distribution",
                &["x", "y"],
                ret(call("value_counts", select(param("x"), param("y")), vec![])),
            ),
            trace: trace(&[
                ("target_table", &[0, 0, 0, 0]),
                ("target_column", &[0, 0, 0, 1]),
                (AGGREGATION, &[0, 0]),
            ]),
            triggers: phrases(&[
                "distribution",
                "breakdown",
                "break down",
                "split by",
                "distributed",
                "grouped",
                "counts per",
            ]),
            answer_template: "{Column} distribution over {total} {unit}{filter}: {items}.".into(),
            result_shape: ResultShape::Distribution,
        },
        CommandSpec {
            name: "share".into(),
            slots: vec![table(), SlotDecl::column("target_column", COUNTABLE)],
            tree: def(
                "share",
                &["x", "y"],
                ret(call(
                    "normalize",
                    call("value_counts", select(param("x"), param("y")), vec![]),
                    vec![],
                )),
            ),
            trace: trace(&[
                ("target_table", &[0, 0, 0, 0, 0]),
                ("target_column", &[0, 0, 0, 0, 1]),
                (AGGREGATION, &[0, 0]),
            ]),
            triggers: phrases(&[
                "share",
                "proportion",
                "percentage",
                "percent",
                "fraction",
                "ratio",
            ]),
            answer_template: "Share of {unit}{filter} by {column}: {items}.".into(),
            result_shape: ResultShape::Distribution,
        },
        CommandSpec {
            name: "trend_by_year".into(),
            slots: vec![table(), SlotDecl::column("year_column", NUMERIC).hinted("year")],
            tree: def(
                "trend_by_year",
                &["x", "y"],
                ret(call(
                    "trend",
                    call(
                        "sort_keys",
                        call("value_counts", select(param("x"), param("y")), vec![]),
                        vec![],
                    ),
                    vec![],
                )),
            ),
            trace: trace(&[
                ("target_table", &[0, 0, 0, 0, 0, 0]),
                ("year_column", &[0, 0, 0, 0, 0, 1]),
                (AGGREGATION, &[0, 0]),
            ]),
            triggers: phrases(&[
                "trend",
                "per year",
                "accidents per year decreasing",
                "decreasing",
                "increasing",
                "evolution",
                "over the years",
                "over time",
                "year over year",
                "changing",
            ]),
            answer_template: "{lead}{unit} per year are {direction}{filter} (slope {slope} per year). Per year: {series}.".into(),
            result_shape: ResultShape::Series,
        },
        CommandSpec {
            name: "describe".into(),
            slots: vec![table(), SlotDecl::column("target_column", NUMERIC)],
            tree: def(
                "describe",
                &["x", "y"],
                ret(call("describe", select(param("x"), param("y")), vec![])),
            ),
            trace: trace(&[
                ("target_table", &[0, 0, 0, 0]),
                ("target_column", &[0, 0, 0, 1]),
                (AGGREGATION, &[0, 0]),
            ]),
            triggers: phrases(&[
                "describe",
                "summary",
                "statistics",
                "average",
                "mean",
                "median",
                "standard deviation",
                "range",
                "typical",
            ]),
            answer_template:
                "{Column} over {total} {unit}{filter}: min {min}, max {max}, mean {mean}, median {median}, std {std}."
                    .into(),
            result_shape: ResultShape::Summary,
        },
        CommandSpec {
            name: "crosstab".into(),
            slots: vec![
                table(),
                SlotDecl::column("row_column", COUNTABLE),
                SlotDecl::column("col_column", COUNTABLE),
            ],
            tree: def(
                "crosstab",
                &["x", "a", "b"],
                ret(call(
                    "crosstab",
                    select(param("x"), param("a")),
                    vec![select(param("x"), param("b"))],
                )),
            ),
            trace: trace(&[
                ("target_table", &[0, 0, 0, 0]),
                ("row_column", &[0, 0, 0, 1]),
                ("col_column", &[0, 0, 1, 1]),
                (AGGREGATION, &[0, 0]),
            ]),
            triggers: phrases(&[
                "impact",
                "effect",
                "relationship",
                "versus",
                "crosstab",
                "cross tabulation",
                "contingency",
                "relation between",
                "association",
                "influence",
                "depend",
            ]),
            answer_template: "{Row} by {col} over {total} {unit}{filter}: {cells}.".into(),
            result_shape: ResultShape::Crosstab,
        },
        CommandSpec {
            name: "filter_preview".into(),
            slots: vec![table()],
            tree: def(
                "filter_preview",
                &["x"],
                ret(call(
                    "head",
                    param("x"),
                    vec![AstNode::Literal(Literal::Int(PREVIEW_ROWS))],
                )),
            ),
            trace: trace(&[("target_table", &[0, 0, 0]), (AGGREGATION, &[0, 0])]),
            triggers: phrases(&[
                "preview",
                "sample",
                "example rows",
                "first rows",
                "list",
                "records",
                "see the data",
            ]),
            answer_template: "Showing {count} of {total} {unit}{filter}:{rows}".into(),
            result_shape: ResultShape::Preview,
        },
    ];
    Registry::new(commands).expect("shipped registry is valid")
}

// ---- binding --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundValue {
    Table(String),
    Column(ColumnRef),
}

impl fmt::Display for BoundValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundValue::Table(t) => f.write_str(t),
            BoundValue::Column(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum Comparison {
    Eq(i64),
    Ne(i64),
    Lt(i64),
    Le(i64),
    Gt(i64),
    Ge(i64),
    In(Vec<i64>),
}

impl Comparison {
    pub fn holds(&self, x: i64) -> bool {
        match self {
            Comparison::Eq(v) => x == *v,
            Comparison::Ne(v) => x != *v,
            Comparison::Lt(v) => x < *v,
            Comparison::Le(v) => x <= *v,
            Comparison::Gt(v) => x > *v,
            Comparison::Ge(v) => x >= *v,
            Comparison::In(vs) => vs.contains(&x),
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Comparison::Eq(v) => write!(f, "= {v}"),
            Comparison::Ne(v) => write!(f, "≠ {v}"),
            Comparison::Lt(v) => write!(f, "< {v}"),
            Comparison::Le(v) => write!(f, "≤ {v}"),
            Comparison::Gt(v) => write!(f, "> {v}"),
            Comparison::Ge(v) => write!(f, "≥ {v}"),
            Comparison::In(vs) => {
                let vs: Vec<String> = vs.iter().map(i64::to_string).collect();
                write!(f, "in {{{}}}", vs.join(", "))
            }
        }
    }
}

/// One conjunct of a filter. Missing cells never satisfy a condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub column: ColumnRef,
    #[serde(flatten)]
    pub cmp: Comparison,
}

impl Condition {
    pub fn new(column: ColumnRef, cmp: Comparison) -> Condition {
        Condition { column, cmp }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.column, self.cmp)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BindError {
    #[error("missing slots: {}", .0.join(", "))]
    MissingSlot(Vec<String>),
    #[error("slot {slot} expects {expected}, got {found}")]
    KindMismatch {
        slot: String,
        expected: String,
        found: String,
    },
    #[error("{command} has no slot {slot}")]
    UnknownSlot { command: String, slot: String },
    #[error("unknown column {0}")]
    UnknownColumn(ColumnRef),
    #[error("unknown table {0}")]
    UnknownTable(String),
}

/// An executable plan: the spec, its bindings, filter conditions and the
/// tree with bindings substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCommand {
    pub spec: CommandSpec,
    pub bindings: BTreeMap<String, BoundValue>,
    pub conditions: Vec<Condition>,
    pub tree: AstNode,
}

impl BoundCommand {
    pub fn target_table(&self) -> Option<&str> {
        let slot = self.spec.table_slot()?;
        match self.bindings.get(&slot.name)? {
            BoundValue::Table(t) => Some(t),
            BoundValue::Column(_) => None,
        }
    }

    /// Bound columns in slot declaration order.
    pub fn columns(&self) -> Vec<&ColumnRef> {
        self.spec
            .column_slots()
            .filter_map(|s| match self.bindings.get(&s.name) {
                Some(BoundValue::Column(c)) => Some(c),
                _ => None,
            })
            .collect()
    }

    pub fn column(&self, slot: &str) -> Option<&ColumnRef> {
        match self.bindings.get(slot)? {
            BoundValue::Column(c) => Some(c),
            BoundValue::Table(_) => None,
        }
    }

    pub fn with_conditions(mut self, conditions: Vec<Condition>) -> BoundCommand {
        self.conditions = conditions;
        self
    }
}

/// Checks bindings against the spec's slots and substitutes them into the
/// tree through the trace table.
pub fn bind(
    spec: &CommandSpec,
    bindings: &BTreeMap<String, BoundValue>,
    catalog: &MetadataCatalog,
) -> Result<BoundCommand, BindError> {
    if let Some(extra) = bindings.keys().find(|k| spec.slot(k).is_none()) {
        return Err(BindError::UnknownSlot {
            command: spec.name.clone(),
            slot: extra.clone(),
        });
    }
    let missing: Vec<String> = spec
        .slots
        .iter()
        .filter(|s| !bindings.contains_key(&s.name))
        .map(|s| s.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(BindError::MissingSlot(missing));
    }

    let target = spec.table_slot().and_then(|s| match &bindings[&s.name] {
        BoundValue::Table(t) => Some(t.clone()),
        BoundValue::Column(_) => None,
    });

    let mut tree = spec.tree.clone();
    for slot in &spec.slots {
        let value = &bindings[&slot.name];
        let literal = match (slot.kind, value) {
            (SlotKind::Table, BoundValue::Table(t)) => {
                if catalog.table(t).is_none() {
                    return Err(BindError::UnknownTable(t.clone()));
                }
                t.clone()
            }
            (SlotKind::Column, BoundValue::Column(c)) => {
                let meta = catalog
                    .column_by_ref(c)
                    .ok_or_else(|| BindError::UnknownColumn(c.clone()))?;
                if !slot.accepts_type(meta.ty) {
                    return Err(BindError::KindMismatch {
                        slot: slot.name.clone(),
                        expected: accepts_text(&slot.accepts),
                        found: format!("{} column {c}", meta.ty.as_str()),
                    });
                }
                if target.as_deref() == Some(c.table.as_str()) {
                    c.column.clone()
                } else {
                    c.to_string()
                }
            }
            (kind, v) => {
                return Err(BindError::KindMismatch {
                    slot: slot.name.clone(),
                    expected: format!("{kind:?}").to_lowercase(),
                    found: v.to_string(),
                })
            }
        };
        let path = &spec.trace.0[&slot.name];
        if let Some(AstNode::Param(p)) = spec.tree.node_at(path) {
            tree.substitute_param(p, &AstNode::Literal(Literal::Text(literal)));
        }
    }
    Ok(BoundCommand {
        spec: spec.clone(),
        bindings: bindings.clone(),
        conditions: Vec::new(),
        tree,
    })
}

fn accepts_text(types: &[ColumnType]) -> String {
    let names: Vec<&str> = types.iter().map(|t| t.as_str()).collect();
    format!("{} column", names.join(" or "))
}
