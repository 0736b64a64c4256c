//! Abstract semantic trees of exploration commands.
//!
//! Canonical text form is a single-line s-expression:
//!
//! ```text
//! (def most_of (x y) (return (call argmax_key (call value_counts (select (param x) (param y))))))
//! ```
//!
//! | node         | form                               | children             |
//! |--------------|------------------------------------|----------------------|
//! | CommandDef   | `(def NAME (P...) BODY)`           | body                 |
//! | Call         | `(call METHOD RECEIVER ARG...)`    | receiver, args...    |
//! | ColumnSelect | `(select TABLE COLUMN)`            | table, column        |
//! | Return       | `(return EXPR)`                    | expr                 |
//! | Param        | `(param NAME)`                     | none                 |
//! | Literal      | `(lit 5)` or `(lit "text")`        | none                 |
//!
//! Paths address nodes by child index from the root, using the child order in
//! the table above.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Text(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(x) => write!(f, "{x}"),
            Literal::Text(s) => {
                f.write_char('"')?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => f.write_char(c)?,
                    }
                }
                f.write_char('"')
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AstNode {
    CommandDef {
        name: String,
        params: Vec<String>,
        body: Box<AstNode>,
    },
    Call {
        method: String,
        receiver: Box<AstNode>,
        args: Vec<AstNode>,
    },
    ColumnSelect {
        table: Box<AstNode>,
        column: Box<AstNode>,
    },
    Return(Box<AstNode>),
    Param(String),
    Literal(Literal),
}

/// Child-index path from the root of a tree.
pub type TreePath = Vec<usize>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AstError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("parameter {0} is used but not declared")]
    UndeclaredParam(String),
    #[error("parameter {0} is declared twice")]
    DuplicateParam(String),
    #[error("invalid identifier {0:?}")]
    BadIdentifier(String),
    #[error("command definition nested below the root")]
    NestedDef,
}

pub fn param(name: &str) -> AstNode {
    AstNode::Param(name.to_string())
}

pub fn call(method: &str, receiver: AstNode, args: Vec<AstNode>) -> AstNode {
    AstNode::Call {
        method: method.to_string(),
        receiver: Box::new(receiver),
        args,
    }
}

pub fn select(table: AstNode, column: AstNode) -> AstNode {
    AstNode::ColumnSelect {
        table: Box::new(table),
        column: Box::new(column),
    }
}

pub fn ret(expr: AstNode) -> AstNode {
    AstNode::Return(Box::new(expr))
}

pub fn def(name: &str, params: &[&str], body: AstNode) -> AstNode {
    AstNode::CommandDef {
        name: name.to_string(),
        params: params.iter().map(|p| p.to_string()).collect(),
        body: Box::new(body),
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl AstNode {
    pub fn children(&self) -> Vec<&AstNode> {
        match self {
            AstNode::CommandDef { body, .. } => vec![body],
            AstNode::Call { receiver, args, .. } => {
                std::iter::once(receiver.as_ref()).chain(args.iter()).collect()
            }
            AstNode::ColumnSelect { table, column } => vec![table, column],
            AstNode::Return(e) => vec![e],
            AstNode::Param(_) | AstNode::Literal(_) => Vec::new(),
        }
    }

    fn child_mut(&mut self, i: usize) -> Option<&mut AstNode> {
        match self {
            AstNode::CommandDef { body, .. } => (i == 0).then_some(body.as_mut()),
            AstNode::Call { receiver, args, .. } => {
                if i == 0 {
                    Some(receiver.as_mut())
                } else {
                    args.get_mut(i - 1)
                }
            }
            AstNode::ColumnSelect { table, column } => match i {
                0 => Some(table.as_mut()),
                1 => Some(column.as_mut()),
                _ => None,
            },
            AstNode::Return(e) => (i == 0).then_some(e.as_mut()),
            AstNode::Param(_) | AstNode::Literal(_) => None,
        }
    }

    pub fn node_at(&self, path: &[usize]) -> Option<&AstNode> {
        path.iter()
            .try_fold(self, |node, &i| node.children().get(i).copied())
    }

    pub fn node_at_mut(&mut self, path: &[usize]) -> Option<&mut AstNode> {
        let mut node = self;
        for &i in path {
            node = node.child_mut(i)?;
        }
        Some(node)
    }

    /// Pre-order walk with paths.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&[usize], &'a AstNode)) {
        fn go<'a>(n: &'a AstNode, path: &mut Vec<usize>, f: &mut impl FnMut(&[usize], &'a AstNode)) {
            f(path, n);
            for (i, c) in n.children().into_iter().enumerate() {
                path.push(i);
                go(c, path, f);
                path.pop();
            }
        }
        go(self, &mut Vec::new(), f);
    }

    /// Replaces every `Param(name)` with `replacement`; returns the count.
    pub fn substitute_param(&mut self, name: &str, replacement: &AstNode) -> usize {
        if matches!(self, AstNode::Param(p) if p == name) {
            *self = replacement.clone();
            return 1;
        }
        let n = self.children().len();
        (0..n)
            .map(|i| {
                self.child_mut(i)
                    .map(|c| c.substitute_param(name, replacement))
                    .unwrap_or(0)
            })
            .sum()
    }

    pub fn count_nodes(&self) -> usize {
        1 + self.children().iter().map(|c| c.count_nodes()).sum::<usize>()
    }

    /// Checks identifiers, declared parameters and that `def` only appears
    /// at the root.
    pub fn validate(&self) -> Result<(), AstError> {
        let (params, body) = match self {
            AstNode::CommandDef { name, params, body } => {
                check_ident(name)?;
                let mut seen = BTreeSet::new();
                for p in params {
                    check_ident(p)?;
                    if !seen.insert(p.as_str()) {
                        return Err(AstError::DuplicateParam(p.clone()));
                    }
                }
                (seen, body.as_ref())
            }
            other => (BTreeSet::new(), other),
        };
        let mut err = None;
        body.walk(&mut |_, n| {
            if err.is_some() {
                return;
            }
            err = match n {
                AstNode::CommandDef { .. } => Some(AstError::NestedDef),
                AstNode::Param(p) if !params.contains(p.as_str()) => {
                    Some(AstError::UndeclaredParam(p.clone()))
                }
                AstNode::Param(p) => check_ident(p).err(),
                AstNode::Call { method, .. } => check_ident(method).err(),
                _ => None,
            };
        });
        err.map_or(Ok(()), Err)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        self.write_to(&mut out);
        out
    }

    fn write_to(&self, out: &mut String) {
        match self {
            AstNode::CommandDef { name, params, body } => {
                let _ = write!(out, "(def {name} ({}) ", params.join(" "));
                body.write_to(out);
                out.push(')');
            }
            AstNode::Call {
                method,
                receiver,
                args,
            } => {
                let _ = write!(out, "(call {method} ");
                receiver.write_to(out);
                for a in args {
                    out.push(' ');
                    a.write_to(out);
                }
                out.push(')');
            }
            AstNode::ColumnSelect { table, column } => {
                out.push_str("(select ");
                table.write_to(out);
                out.push(' ');
                column.write_to(out);
                out.push(')');
            }
            AstNode::Return(e) => {
                out.push_str("(return ");
                e.write_to(out);
                out.push(')');
            }
            AstNode::Param(p) => {
                let _ = write!(out, "(param {p})");
            }
            AstNode::Literal(l) => {
                let _ = write!(out, "(lit {l})");
            }
        }
    }

    pub fn parse(text: &str) -> Result<AstNode, AstError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let node = p.node()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("trailing input"));
        }
        Ok(node)
    }
}

impl fmt::Display for AstNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl Serialize for AstNode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&AstNode::serialize(self))
    }
}

impl<'de> Deserialize<'de> for AstNode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AstNode::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn check_ident(s: &str) -> Result<(), AstError> {
    if is_identifier(s) {
        Ok(())
    } else {
        Err(AstError::BadIdentifier(s.to_string()))
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> AstError {
        AstError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), AstError> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected {:?}", b as char)))
        }
    }

    fn ident(&mut self) -> Result<String, AstError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if is_identifier(s) {
            Ok(s.to_string())
        } else {
            self.pos = start;
            Err(self.error("expected identifier"))
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn node(&mut self) -> Result<AstNode, AstError> {
        self.expect(b'(')?;
        let head = self.ident()?;
        let node = match head.as_str() {
            "def" => {
                let name = self.ident()?;
                self.expect(b'(')?;
                let mut params = Vec::new();
                while self.peek() != Some(b')') {
                    params.push(self.ident()?);
                }
                self.expect(b')')?;
                let body = self.node()?;
                AstNode::CommandDef {
                    name,
                    params,
                    body: Box::new(body),
                }
            }
            "call" => {
                let method = self.ident()?;
                let receiver = self.node()?;
                let mut args = Vec::new();
                while self.peek() == Some(b'(') {
                    args.push(self.node()?);
                }
                AstNode::Call {
                    method,
                    receiver: Box::new(receiver),
                    args,
                }
            }
            "select" => {
                let table = self.node()?;
                let column = self.node()?;
                select(table, column)
            }
            "return" => ret(self.node()?),
            "param" => AstNode::Param(self.ident()?),
            "lit" => AstNode::Literal(self.literal()?),
            _ => return Err(self.error(&format!("unknown node kind {head}"))),
        };
        self.expect(b')')?;
        Ok(node)
    }

    fn literal(&mut self) -> Result<Literal, AstError> {
        match self.peek() {
            Some(b'"') => {
                self.pos += 1;
                let mut out = String::new();
                let rest = std::str::from_utf8(&self.src[self.pos..])
                    .map_err(|_| self.error("invalid utf-8"))?;
                let mut chars = rest.char_indices();
                while let Some((i, c)) = chars.next() {
                    match c {
                        '"' => {
                            self.pos += i + 1;
                            return Ok(Literal::Text(out));
                        }
                        '\\' => match chars.next() {
                            Some((_, '"')) => out.push('"'),
                            Some((_, '\\')) => out.push('\\'),
                            Some((_, 'n')) => out.push('\n'),
                            _ => return Err(self.error("bad escape")),
                        },
                        c => out.push(c),
                    }
                }
                Err(self.error("unterminated string"))
            }
            Some(b) if b == b'-' || b.is_ascii_digit() => {
                let start = self.pos;
                self.pos += 1;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                std::str::from_utf8(&self.src[start..self.pos])
                    .expect("ascii")
                    .parse()
                    .map(Literal::Int)
                    .map_err(|_| self.error("bad integer"))
            }
            _ => Err(self.error("expected literal")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn most_of() -> AstNode {
        def(
            "most_of",
            &["x", "y"],
            ret(call(
                "argmax_key",
                call("value_counts", select(param("x"), param("y")), vec![]),
                vec![],
            )),
        )
    }

    #[test]
    fn param_leaf() {
        assert_eq!(param("x").serialize(), "(param x)");
    }

    #[test]
    fn most_of_text() {
        assert_eq!(
            most_of().serialize(),
            "(def most_of (x y) (return (call argmax_key (call value_counts (select (param x) (param y))))))"
        );
    }

    #[test]
    fn round_trip_and_whitespace_tolerance() {
        let t = most_of();
        assert_eq!(AstNode::parse(&t.serialize()).unwrap(), t);
        let spaced = "( def most_of ( x y )\n  (return (call argmax_key (call value_counts (select (param x) (param y))))) )";
        assert_eq!(AstNode::parse(spaced).unwrap(), t);
    }

    #[test]
    fn structurally_different_trees_serialize_differently() {
        let a = call("f", param("x"), vec![param("y")]);
        let b = call("f", param("x"), vec![]);
        let c = call("f", call("g", param("x"), vec![]), vec![]);
        assert_ne!(a.serialize(), b.serialize());
        assert_ne!(b.serialize(), c.serialize());
        let lit_int = AstNode::Literal(Literal::Int(5));
        let lit_txt = AstNode::Literal(Literal::Text("5".into()));
        assert_ne!(lit_int.serialize(), lit_txt.serialize());
    }

    #[test]
    fn literal_escapes() {
        let n = AstNode::Literal(Literal::Text("a \"b\" \\ c\nd".into()));
        assert_eq!(AstNode::parse(&n.serialize()).unwrap(), n);
        let neg = AstNode::Literal(Literal::Int(-12));
        assert_eq!(neg.serialize(), "(lit -12)");
        assert_eq!(AstNode::parse("(lit -12)").unwrap(), neg);
    }

    #[test]
    fn paths() {
        let t = most_of();
        assert_eq!(t.node_at(&[0, 0, 0, 0, 0]), Some(&param("x")));
        assert_eq!(t.node_at(&[0, 0, 0, 0, 1]), Some(&param("y")));
        assert!(matches!(t.node_at(&[0, 0]), Some(AstNode::Call { method, .. }) if method == "argmax_key"));
        assert_eq!(t.node_at(&[0, 1]), None);
        assert_eq!(t.node_at(&[]), Some(&t));
    }

    #[test]
    fn substitution_replaces_every_occurrence() {
        let mut t = def(
            "crosstab",
            &["x", "a", "b"],
            ret(call(
                "crosstab",
                select(param("x"), param("a")),
                vec![select(param("x"), param("b"))],
            )),
        );
        let n = t.substitute_param("x", &AstNode::Literal(Literal::Text("users".into())));
        assert_eq!(n, 2);
        assert!(t.serialize().contains("(select (lit \"users\") (param a))"));
    }

    #[test]
    fn validation() {
        assert_eq!(most_of().validate(), Ok(()));
        let bad = def("f", &["x"], ret(param("y")));
        assert_eq!(bad.validate(), Err(AstError::UndeclaredParam("y".into())));
        let dup = def("f", &["x", "x"], ret(param("x")));
        assert_eq!(dup.validate(), Err(AstError::DuplicateParam("x".into())));
        let nested = def("f", &[], ret(def("g", &[], ret(AstNode::Literal(Literal::Int(1))))));
        assert_eq!(nested.validate(), Err(AstError::NestedDef));
    }

    #[test]
    fn parse_errors() {
        assert!(AstNode::parse("(param)").is_err());
        assert!(AstNode::parse("(param x").is_err());
        assert!(AstNode::parse("(param x) extra").is_err());
        assert!(AstNode::parse("(frob x)").is_err());
        assert!(AstNode::parse("(lit \"open)").is_err());
    }
}
