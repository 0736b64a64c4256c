//! Conversational exploration of tabular road-accident data.

pub mod ast;
pub mod catalog;
pub mod corpus;
pub mod dialogue;
pub mod engine;
pub mod matcher;
pub mod nlg;
pub mod registry;
pub mod session;
pub mod table;
pub mod text;

pub use ast::{AstError, AstNode, Literal, TreePath};
pub use catalog::{CatalogError, ColumnMeta, ColumnRef, ColumnType, MetadataCatalog, TableMeta};
pub use registry::{
    bind, builtin_registry, BindError, BoundCommand, BoundValue, CommandSpec, Comparison,
    Condition, Registry, ResultShape, SlotDecl, SlotKind,
};
pub use table::{CellValue, Column, ColumnData, Table, TableError, TableSet};
pub use matcher::{Matcher, MatchStatus, MissingSlot, QueryResolution, UserProfile};
pub use engine::{execute, ExecError, Execution, ExecutionTrace, ResultValue};
pub use nlg::render_answer;
pub use session::{EventKind, EventRecord, EventRef, SessionError, SessionStore, SessionSummary};
pub use dialogue::{Assistant, ChatService, DialogueState, Reply, ReplyKind, TurnResult};
pub use corpus::{evaluate, parse_corpus, CorpusEntry, CorpusReport};
