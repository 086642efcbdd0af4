//! Style-layer filters.
//!
//! Expressions are written as s-expressions:
//!
//! ```text
//! expr    := true | false
//!          | (OP column literal)            OP: == != < <= > >=
//!          | (in column literal*) | (!in column literal*)
//!          | (has column) | (!has column)
//!          | (all expr*) | (any expr*) | (none expr*)
//! column  := symbol | "quoted"              $type tests the geometry type
//! literal := number | "string" | true | false
//! suite   := (layer "name" expr)*           ; comments run to end of line
//! ```
//!
//! Struct fields are addressed as `parent.field`. Comparisons and membership
//! tests on a null or missing value are false, including `!=` and `!in`.
//! Numbers compare as `f64`.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::memory::{
    BoolVector, DictionaryVector, FlatVector, Lane, OffsetVector, SelectionVector, Vector, VectorTable,
};
use crate::model::{AttributeScope, ColumnDef, ColumnType, FeatureTable, GeometryType, ScalarType, Value};

pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    /// Applies the operator to an ordering; unordered operands never match.
    #[inline]
    pub fn holds(self, ord: Option<Ordering>) -> bool {
        match (self, ord) {
            (_, None) => false,
            (CmpOp::Eq, Some(o)) => o == Ordering::Equal,
            (CmpOp::Ne, Some(o)) => o != Ordering::Equal,
            (CmpOp::Lt, Some(o)) => o == Ordering::Less,
            (CmpOp::Le, Some(o)) => o != Ordering::Greater,
            (CmpOp::Gt, Some(o)) => o == Ordering::Greater,
            (CmpOp::Ge, Some(o)) => o != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Bool(bool),
    Number(f64),
    String(String),
}

impl Literal {
    fn kind(&self) -> &'static str {
        match self {
            Literal::Bool(_) => "boolean",
            Literal::Number(_) => "number",
            Literal::String(_) => "string",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterExpr {
    Const(bool),
    Compare { column: String, op: CmpOp, literal: Literal },
    In { column: String, values: Vec<Literal>, negated: bool },
    Has { column: String, negated: bool },
    All(Vec<FilterExpr>),
    Any(Vec<FilterExpr>),
    None(Vec<FilterExpr>),
}

pub const TYPE_COLUMN: &str = "$type";

impl FilterExpr {
    pub fn depth(&self) -> usize {
        match self {
            FilterExpr::All(c) | FilterExpr::Any(c) | FilterExpr::None(c) => {
                1 + c.iter().map(FilterExpr::depth).max().unwrap_or(0)
            }
            _ => 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("{column}: cannot compare a {column_type} column with a {literal} literal")]
    TypeMismatch { column: String, column_type: String, literal: &'static str },
    #[error("{0}: vertex-scoped columns cannot be filtered")]
    VertexScope(String),
    #[error("expression deeper than {MAX_DEPTH}")]
    TooDeep,
}

// ---------------------------------------------------------------------------
// parsing and printing

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Str(String),
    Atom(String),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, FilterError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'(' => {
                out.push((i, Token::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Token::Close));
                i += 1;
            }
            b';' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_whitespace() => i += 1,
            b'"' => {
                let start = i;
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(ch) = src[i..].chars().next() else {
                        return Err(FilterError::Parse { offset: start, message: "unterminated string".into() });
                    };
                    i += ch.len_utf8();
                    match ch {
                        '"' => break,
                        '\\' => {
                            let Some(esc) = src[i..].chars().next() else {
                                return Err(FilterError::Parse { offset: i, message: "dangling escape".into() });
                            };
                            i += esc.len_utf8();
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                '"' | '\\' => esc,
                                _ => return Err(FilterError::Parse { offset: i - 1, message: format!("unknown escape \\{esc}") }),
                            });
                        }
                        ch => s.push(ch),
                    }
                }
                out.push((start, Token::Str(s)));
            }
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !b"();\"".contains(&bytes[i]) {
                    i += 1;
                }
                out.push((start, Token::Atom(src[start..i].to_string())));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, FilterError> {
        Err(FilterError::Parse { offset: self.offset(), message: message.into() })
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.1)
    }

    fn close(&mut self) -> Result<(), FilterError> {
        match self.peek() {
            Some(Token::Close) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err("expected ')'"),
        }
    }

    fn column(&mut self) -> Result<String, FilterError> {
        match self.next() {
            Some(Token::Atom(a)) if !is_number(&a) && a != "true" && a != "false" => Ok(a),
            Some(Token::Str(s)) => Ok(s),
            _ => {
                self.pos -= 1;
                self.err("expected column name")
            }
        }
    }

    fn literal(&mut self) -> Result<Literal, FilterError> {
        match self.next() {
            Some(Token::Str(s)) => Ok(Literal::String(s)),
            Some(Token::Atom(a)) if a == "true" => Ok(Literal::Bool(true)),
            Some(Token::Atom(a)) if a == "false" => Ok(Literal::Bool(false)),
            Some(Token::Atom(a)) if is_number(&a) => match a.parse::<f64>() {
                Ok(n) if n.is_finite() => Ok(Literal::Number(n)),
                _ => {
                    self.pos -= 1;
                    self.err(format!("invalid number {a}"))
                }
            },
            _ => {
                self.pos -= 1;
                self.err("expected literal")
            }
        }
    }

    fn expr(&mut self, depth: usize) -> Result<FilterExpr, FilterError> {
        if depth > MAX_DEPTH {
            return Err(FilterError::TooDeep);
        }
        match self.next() {
            Some(Token::Atom(a)) if a == "true" => return Ok(FilterExpr::Const(true)),
            Some(Token::Atom(a)) if a == "false" => return Ok(FilterExpr::Const(false)),
            Some(Token::Open) => {}
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return self.err("expected expression");
            }
        }
        let head = match self.next() {
            Some(Token::Atom(a)) => a,
            _ => {
                self.pos -= 1;
                return self.err("expected operator");
            }
        };
        let e = if let Some(op) = CmpOp::from_symbol(&head) {
            let column = self.column()?;
            let literal = self.literal()?;
            FilterExpr::Compare { column, op, literal }
        } else {
            match head.as_str() {
                "in" | "!in" => {
                    let column = self.column()?;
                    let mut values = Vec::new();
                    while !matches!(self.peek(), Some(Token::Close) | None) {
                        values.push(self.literal()?);
                    }
                    FilterExpr::In { column, values, negated: head == "!in" }
                }
                "has" | "!has" => FilterExpr::Has { column: self.column()?, negated: head == "!has" },
                "all" | "any" | "none" => {
                    let mut children = Vec::new();
                    while !matches!(self.peek(), Some(Token::Close) | None) {
                        children.push(self.expr(depth + 1)?);
                    }
                    match head.as_str() {
                        "all" => FilterExpr::All(children),
                        "any" => FilterExpr::Any(children),
                        _ => FilterExpr::None(children),
                    }
                }
                _ => {
                    self.pos -= 1;
                    return self.err(format!("unknown operator {head}"));
                }
            }
        };
        self.close()?;
        Ok(e)
    }
}

fn is_number(a: &str) -> bool {
    let digits = a.strip_prefix('-').unwrap_or(a);
    digits.starts_with(|c: char| c.is_ascii_digit())
}

pub fn parse(src: &str) -> Result<FilterExpr, FilterError> {
    let mut p = Parser { tokens: tokenize(src)?, pos: 0, end: src.len() };
    let e = p.expr(1)?;
    if p.pos < p.tokens.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

/// One entry of a filter suite: a layer name and its filter.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub layer: String,
    pub filter: FilterExpr,
}

pub fn parse_suite(src: &str) -> Result<Vec<SuiteEntry>, FilterError> {
    let mut p = Parser { tokens: tokenize(src)?, pos: 0, end: src.len() };
    let mut out = Vec::new();
    while p.pos < p.tokens.len() {
        if p.next() != Some(Token::Open) || p.next() != Some(Token::Atom("layer".into())) {
            p.pos -= 1;
            return p.err("expected (layer \"name\" expr)");
        }
        let layer = match p.next() {
            Some(Token::Str(s)) | Some(Token::Atom(s)) => s,
            _ => {
                p.pos -= 1;
                return p.err("expected layer name");
            }
        };
        let filter = p.expr(1)?;
        p.close()?;
        out.push(SuiteEntry { layer, filter });
    }
    Ok(out)
}

fn is_symbol(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || "_:.$-".contains(c))
        && s != "true"
        && s != "false"
}

fn write_str(s: &str, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

fn write_column(s: &str, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if is_symbol(s) {
        f.write_str(s)
    } else {
        write_str(s, f)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Number(n) => write!(f, "{n}"),
            Literal::String(s) => write_str(s, f),
        }
    }
}

impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let children = |f: &mut fmt::Formatter<'_>, name: &str, c: &[FilterExpr]| {
            write!(f, "({name}")?;
            for e in c {
                write!(f, " {e}")?;
            }
            f.write_str(")")
        };
        match self {
            FilterExpr::Const(b) => write!(f, "{b}"),
            FilterExpr::Compare { column, op, literal } => {
                write!(f, "({} ", op.symbol())?;
                write_column(column, f)?;
                write!(f, " {literal})")
            }
            FilterExpr::In { column, values, negated } => {
                write!(f, "({} ", if *negated { "!in" } else { "in" })?;
                write_column(column, f)?;
                for v in values {
                    write!(f, " {v}")?;
                }
                f.write_str(")")
            }
            FilterExpr::Has { column, negated } => {
                write!(f, "({} ", if *negated { "!has" } else { "has" })?;
                write_column(column, f)?;
                f.write_str(")")
            }
            FilterExpr::All(c) => children(f, "all", c),
            FilterExpr::Any(c) => children(f, "any", c),
            FilterExpr::None(c) => children(f, "none", c),
        }
    }
}

// ---------------------------------------------------------------------------
// type checking (shared by both engines)

/// Scalar type of a column reference, `None` when it does not exist.
enum Resolved {
    Missing,
    Type,
    Scalar(ScalarType),
    Nested(String),
}

fn resolve(schema: &[ColumnDef], column: &str) -> Result<Resolved, FilterError> {
    if column == TYPE_COLUMN {
        return Ok(Resolved::Type);
    }
    let check_scope = |d: &ColumnDef| {
        if d.scope == AttributeScope::Vertex {
            Err(FilterError::VertexScope(column.to_string()))
        } else {
            Ok(())
        }
    };
    if let Some(d) = schema.iter().find(|d| d.name == column) {
        check_scope(d)?;
        return Ok(match &d.ty {
            ColumnType::Scalar(t) => Resolved::Scalar(*t),
            ColumnType::List(t) => Resolved::Nested(format!("list<{t:?}>")),
            ColumnType::Struct(_) => Resolved::Nested("struct".into()),
        });
    }
    if let Some((parent, field)) = column.split_once('.') {
        if let Some(d) = schema.iter().find(|d| d.name == parent) {
            if let ColumnType::Struct(fields) = &d.ty {
                if let Some((_, t)) = fields.iter().find(|(n, _)| n == field) {
                    check_scope(d)?;
                    return Ok(Resolved::Scalar(*t));
                }
            }
        }
    }
    Ok(Resolved::Missing)
}

fn literal_fits(ty: ScalarType, lit: &Literal) -> bool {
    match lit {
        Literal::Bool(_) => ty == ScalarType::Boolean,
        Literal::Number(_) => ty.is_numeric(),
        Literal::String(_) => ty == ScalarType::String,
    }
}

fn check_literals(schema: &[ColumnDef], column: &str, lits: &[&Literal]) -> Result<Resolved, FilterError> {
    let r = resolve(schema, column)?;
    let type_name = match &r {
        Resolved::Missing => return Ok(r),
        Resolved::Type => {
            if lits.iter().all(|l| matches!(l, Literal::String(_))) {
                return Ok(r);
            }
            "geometry type".to_string()
        }
        Resolved::Scalar(t) => {
            if lits.iter().all(|l| literal_fits(*t, l)) {
                return Ok(r);
            }
            format!("{t:?}")
        }
        Resolved::Nested(name) => name.clone(),
    };
    let bad = lits
        .iter()
        .find(|l| !matches!((&r, l), (Resolved::Scalar(t), l) if literal_fits(*t, l)))
        .map_or("literal", |l| l.kind());
    Err(FilterError::TypeMismatch { column: column.to_string(), column_type: type_name, literal: bad })
}

pub fn check(expr: &FilterExpr, schema: &[ColumnDef]) -> Result<(), FilterError> {
    if expr.depth() > MAX_DEPTH {
        return Err(FilterError::TooDeep);
    }
    check_inner(expr, schema)
}

fn check_inner(expr: &FilterExpr, schema: &[ColumnDef]) -> Result<(), FilterError> {
    match expr {
        FilterExpr::Const(_) => Ok(()),
        FilterExpr::Compare { column, literal, .. } => check_literals(schema, column, &[literal]).map(drop),
        FilterExpr::In { column, values, .. } => {
            check_literals(schema, column, &values.iter().collect::<Vec<_>>()).map(drop)
        }
        FilterExpr::Has { column, .. } => resolve(schema, column).map(drop),
        FilterExpr::All(c) | FilterExpr::Any(c) | FilterExpr::None(c) => {
            c.iter().try_for_each(|e| check_inner(e, schema))
        }
    }
}

/// Base type name used by `$type`: multi-part geometries report their
/// single-part name.
pub fn type_name(t: GeometryType) -> &'static str {
    match t {
        GeometryType::Point | GeometryType::MultiPoint => "Point",
        GeometryType::LineString | GeometryType::MultiLineString => "LineString",
        GeometryType::Polygon | GeometryType::MultiPolygon => "Polygon",
    }
}

fn compare_literal(v: &Value, lit: &Literal) -> Option<Ordering> {
    match (v, lit) {
        (Value::Bool(a), Literal::Bool(b)) => Some(a.cmp(b)),
        (Value::String(a), Literal::String(b)) => Some(a.as_str().cmp(b.as_str())),
        (v, Literal::Number(n)) => v.as_f64()?.partial_cmp(n),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// tuple-at-a-time reference engine

fn row_value<'t>(table: &'t FeatureTable, column: &str, row: usize) -> Option<&'t Value> {
    if let Some(c) = table.column(column) {
        return Some(&c.values[row]);
    }
    let (parent, field) = column.split_once('.')?;
    let c = table.column(parent)?;
    let ColumnType::Struct(fields) = &c.def.ty else { return None };
    let k = fields.iter().position(|(n, _)| n == field)?;
    match &c.values[row] {
        Value::Struct(vals) => vals.get(k),
        _ => Some(&Value::Null),
    }
}

fn eval_row(expr: &FilterExpr, table: &FeatureTable, row: usize) -> bool {
    let value = |column: &str| -> Option<Value> {
        if column == TYPE_COLUMN {
            return Some(Value::String(type_name(table.geometries[row].geometry_type()).into()));
        }
        row_value(table, column, row).cloned()
    };
    match expr {
        FilterExpr::Const(b) => *b,
        FilterExpr::Compare { column, op, literal } => match value(column) {
            None | Some(Value::Null) => false,
            Some(v) => op.holds(compare_literal(&v, literal)),
        },
        FilterExpr::In { column, values, negated } => match value(column) {
            None | Some(Value::Null) => false,
            Some(v) => {
                let found = values.iter().any(|l| compare_literal(&v, l) == Some(Ordering::Equal));
                found != *negated
            }
        },
        FilterExpr::Has { column, negated } => {
            let present = column != TYPE_COLUMN && value(column).is_some_and(|v| !v.is_null());
            present != *negated
        }
        FilterExpr::All(c) => c.iter().all(|e| eval_row(e, table, row)),
        FilterExpr::Any(c) => c.iter().any(|e| eval_row(e, table, row)),
        FilterExpr::None(c) => !c.iter().any(|e| eval_row(e, table, row)),
    }
}

/// Row-by-row interpretation over the logical table; the semantic reference.
pub fn evaluate_tuple_at_a_time(expr: &FilterExpr, table: &FeatureTable) -> Result<SelectionVector, FilterError> {
    check(expr, &table.schema())?;
    let rows = (0..table.len()).filter(|&r| eval_row(expr, table, r)).map(|r| r as u32).collect();
    Ok(SelectionVector::from_rows(rows).expect("rows ascend"))
}

// ---------------------------------------------------------------------------
// compiled plans

/// Location of a vector inside a table: column index and optional struct field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnHandle {
    pub column: usize,
    pub field: Option<usize>,
}

impl ColumnHandle {
    fn vector<'t>(&self, table: &'t VectorTable) -> &'t Vector {
        let v = &table.columns[self.column].1;
        match (self.field, v) {
            (Some(f), Vector::Struct(s)) => &s.fields[f].1,
            _ => v,
        }
    }
}

/// A value predicate, specialized by literal type.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Number(CmpOp, f64),
    NumberIn(Vec<f64>, bool),
    Bool(CmpOp, bool),
    BoolIn([bool; 2], bool),
    String(CmpOp, String),
    StringIn(Vec<String>, bool),
}

impl Predicate {
    fn from_compare(op: CmpOp, lit: &Literal) -> Self {
        match lit {
            Literal::Number(n) => Predicate::Number(op, *n),
            Literal::Bool(b) => Predicate::Bool(op, *b),
            Literal::String(s) => Predicate::String(op, s.clone()),
        }
    }

    fn from_in(values: &[Literal], negated: bool, ty: ScalarType) -> Self {
        match ty {
            ScalarType::Boolean => {
                let mut set = [false; 2];
                for v in values {
                    if let Literal::Bool(b) = v {
                        set[*b as usize] = true;
                    }
                }
                Predicate::BoolIn(set, negated)
            }
            ScalarType::String => Predicate::StringIn(
                values.iter().filter_map(|v| if let Literal::String(s) = v { Some(s.clone()) } else { None }).collect(),
                negated,
            ),
            _ => Predicate::NumberIn(
                values.iter().filter_map(|v| if let Literal::Number(n) = v { Some(*n) } else { None }).collect(),
                negated,
            ),
        }
    }

    fn test_str(&self, s: &str) -> bool {
        match self {
            Predicate::String(op, lit) => op.holds(Some(s.cmp(lit.as_str()))),
            Predicate::StringIn(set, negated) => set.iter().any(|x| x == s) != *negated,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// Compare decoded values against a literal.
    Values { handle: ColumnHandle, predicate: Predicate },
    /// Rows whose dictionary index equals `index`.
    IndexEquals { handle: ColumnHandle, index: u32 },
    /// Rows whose dictionary index is marked in `mask`.
    IndexMask { handle: ColumnHandle, mask: Vec<bool> },
    /// Rows with (or, negated, without) a valid value.
    Has { handle: ColumnHandle, negated: bool },
    /// Rows whose geometry type code is marked.
    TypeMask([bool; 6]),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanNode {
    Const(bool),
    Kernel(Kernel),
    /// Child node indices, all earlier in the plan.
    All(Vec<usize>),
    Any(Vec<usize>),
    None(Vec<usize>),
}

/// Post-order node list; the root is the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPlan {
    pub nodes: Vec<PlanNode>,
}

impl FilterPlan {
    pub fn root(&self) -> &PlanNode {
        self.nodes.last().expect("plans are never empty")
    }

    /// Whether the plan reduced to a constant.
    pub fn constant(&self) -> Option<bool> {
        match self.root() {
            PlanNode::Const(b) => Some(*b),
            _ => None,
        }
    }
}

fn handle_of(table: &VectorTable, column: &str) -> Option<ColumnHandle> {
    if let Some(i) = table.columns.iter().position(|(d, _)| d.name == column) {
        return Some(ColumnHandle { column: i, field: None });
    }
    let (parent, field) = column.split_once('.')?;
    let i = table.columns.iter().position(|(d, _)| d.name == parent)?;
    match &table.columns[i].1 {
        Vector::Struct(s) => {
            let f = s.fields.iter().position(|(n, _)| n == field)?;
            Some(ColumnHandle { column: i, field: Some(f) })
        }
        _ => None,
    }
}

fn table_schema(table: &VectorTable) -> Vec<ColumnDef> {
    table.columns.iter().filter_map(|(d, _)| d.column_def()).collect()
}

/// Compiles an expression against a table's schema and dictionaries.
pub fn compile(expr: &FilterExpr, table: &VectorTable) -> Result<FilterPlan, FilterError> {
    check(expr, &table_schema(table))?;
    let mut nodes = Vec::new();
    compile_node(expr, table, &mut nodes);
    Ok(FilterPlan { nodes })
}

fn type_mask(f: impl Fn(&str) -> bool) -> [bool; 6] {
    GeometryType::ALL.map(|t| f(type_name(t)))
}

fn compile_leaf(expr: &FilterExpr, table: &VectorTable) -> PlanNode {
    let (column, predicate) = match expr {
        FilterExpr::Compare { column, op, literal } => (column, Predicate::from_compare(*op, literal)),
        FilterExpr::In { column, values, negated } => {
            let ty = match handle_of(table, column).map(|h| h.vector(table)) {
                Some(Vector::Bool(_)) => ScalarType::Boolean,
                Some(Vector::String(_) | Vector::Dictionary(_)) => ScalarType::String,
                _ if column == TYPE_COLUMN => ScalarType::String,
                _ => ScalarType::Float64,
            };
            (column, Predicate::from_in(values, *negated, ty))
        }
        FilterExpr::Has { column, negated } => {
            return match handle_of(table, column) {
                Some(handle) if column != TYPE_COLUMN => PlanNode::Kernel(Kernel::Has { handle, negated: *negated }),
                _ => PlanNode::Const(*negated),
            };
        }
        _ => unreachable!("combinators are handled by compile_node"),
    };
    if column == TYPE_COLUMN {
        return PlanNode::Kernel(Kernel::TypeMask(type_mask(|name| predicate.test_str(name))));
    }
    let Some(handle) = handle_of(table, column) else {
        return PlanNode::Const(false);
    };
    if let Vector::Dictionary(d) = handle.vector(table) {
        let dict = &d.dictionary;
        if let Predicate::String(CmpOp::Eq, lit) = &predicate {
            return match dict.find(lit) {
                Some(index) => PlanNode::Kernel(Kernel::IndexEquals { handle, index }),
                None => PlanNode::Const(false),
            };
        }
        let mask: Vec<bool> = (0..dict.len()).map(|i| predicate.test_str(dict.str(i))).collect();
        if !mask.contains(&true) {
            return PlanNode::Const(false);
        }
        return PlanNode::Kernel(Kernel::IndexMask { handle, mask });
    }
    PlanNode::Kernel(Kernel::Values { handle, predicate })
}

fn compile_node(expr: &FilterExpr, table: &VectorTable, nodes: &mut Vec<PlanNode>) -> usize {
    let node = match expr {
        FilterExpr::Const(b) => PlanNode::Const(*b),
        FilterExpr::All(c) | FilterExpr::Any(c) | FilterExpr::None(c) => {
            let mut kids = Vec::with_capacity(c.len());
            let mut consts = Vec::new();
            for e in c {
                let k = compile_node(e, table, nodes);
                match nodes[k] {
                    PlanNode::Const(b) => consts.push(b),
                    _ => kids.push(k),
                }
            }
            match expr {
                FilterExpr::All(_) if consts.contains(&false) => PlanNode::Const(false),
                FilterExpr::All(_) if kids.is_empty() => PlanNode::Const(true),
                FilterExpr::All(_) => PlanNode::All(kids),
                FilterExpr::Any(_) if consts.contains(&true) => PlanNode::Const(true),
                FilterExpr::Any(_) if kids.is_empty() => PlanNode::Const(false),
                FilterExpr::Any(_) => PlanNode::Any(kids),
                _ if consts.contains(&true) => PlanNode::Const(false),
                _ if kids.is_empty() => PlanNode::Const(true),
                _ => PlanNode::None(kids),
            }
        }
        leaf => compile_leaf(leaf, table),
    };
    nodes.push(node);
    nodes.len() - 1
}

// ---------------------------------------------------------------------------
// kernels

#[inline]
fn select_where(input: &SelectionVector, mut keep: impl FnMut(usize) -> bool) -> SelectionVector {
    let rows: Vec<u32> = input.as_slice().iter().copied().filter(|&r| keep(r as usize)).collect();
    SelectionVector::from_rows(rows).expect("subset of a sorted selection")
}

fn select_flat<T: Lane>(v: &FlatVector<T>, input: &SelectionVector, f: impl Fn(T) -> bool) -> SelectionVector {
    let values = v.values.as_slice();
    match &v.validity {
        None => select_where(input, |r| f(values[r])),
        Some(valid) => select_where(input, |r| valid.get(r) && f(values[r])),
    }
}

macro_rules! numeric_kernel {
    ($v:expr, $input:expr, $pred:expr) => {{
        let v = $v;
        match $pred {
            Predicate::Number(op, lit) => {
                let lit = *lit;
                match op {
                    CmpOp::Eq => select_flat(v, $input, |x| (x as f64) == lit),
                    CmpOp::Ne => select_flat(v, $input, |x| {
                        let x = x as f64;
                        x != lit && !x.is_nan()
                    }),
                    CmpOp::Lt => select_flat(v, $input, |x| (x as f64) < lit),
                    CmpOp::Le => select_flat(v, $input, |x| (x as f64) <= lit),
                    CmpOp::Gt => select_flat(v, $input, |x| (x as f64) > lit),
                    CmpOp::Ge => select_flat(v, $input, |x| (x as f64) >= lit),
                }
            }
            Predicate::NumberIn(set, negated) => {
                select_flat(v, $input, |x| {
                    let x = x as f64;
                    set.iter().any(|&s| s == x) != *negated
                })
            }
            _ => SelectionVector::empty(),
        }
    }};
}

fn bool_kernel(v: &BoolVector, input: &SelectionVector, predicate: &Predicate) -> SelectionVector {
    let test: Box<dyn Fn(bool) -> bool> = match predicate {
        Predicate::Bool(op, lit) => {
            let (op, lit) = (*op, *lit);
            Box::new(move |x: bool| op.holds(Some(x.cmp(&lit))))
        }
        Predicate::BoolIn(set, negated) => {
            let (set, negated) = (*set, *negated);
            Box::new(move |x: bool| set[x as usize] != negated)
        }
        _ => return SelectionVector::empty(),
    };
    select_where(input, |r| v.validity.as_ref().is_none_or(|b| b.get(r)) && test(v.values.get(r)))
}

fn string_kernel(v: &OffsetVector, input: &SelectionVector, predicate: &Predicate) -> SelectionVector {
    match predicate {
        Predicate::String(CmpOp::Eq, lit) => {
            let lit = lit.as_bytes();
            select_where(input, |r| v.is_valid(r) && v.bytes(r) == lit)
        }
        Predicate::String(op, lit) => {
            let lit = lit.as_bytes();
            select_where(input, |r| v.is_valid(r) && op.holds(Some(v.bytes(r).cmp(lit))))
        }
        Predicate::StringIn(set, negated) => {
            select_where(input, |r| v.is_valid(r) && set.iter().any(|s| s.as_bytes() == v.bytes(r)) != *negated)
        }
        _ => SelectionVector::empty(),
    }
}

fn index_kernel(d: &DictionaryVector, input: &SelectionVector, f: impl Fn(u32) -> bool) -> SelectionVector {
    select_flat(&d.indices, input, f)
}

/// Vectorized comparison of one vector against a predicate, restricted to
/// the rows of `input`.
pub fn kernel_compare(vector: &Vector, predicate: &Predicate, input: &SelectionVector) -> SelectionVector {
    match vector {
        Vector::I32(v) => numeric_kernel!(v, input, predicate),
        Vector::U32(v) => numeric_kernel!(v, input, predicate),
        Vector::I64(v) => numeric_kernel!(v, input, predicate),
        Vector::U64(v) => numeric_kernel!(v, input, predicate),
        Vector::F32(v) => numeric_kernel!(v, input, predicate),
        Vector::F64(v) => numeric_kernel!(v, input, predicate),
        Vector::Bool(v) => bool_kernel(v, input, predicate),
        Vector::String(v) => string_kernel(v, input, predicate),
        Vector::Dictionary(d) => {
            let dict = &d.dictionary;
            let mask: Vec<bool> = (0..dict.len()).map(|i| predicate.test_str(dict.str(i))).collect();
            index_kernel(d, input, |i| mask[i as usize])
        }
        Vector::Run(_) | Vector::List(_) | Vector::Struct(_) => SelectionVector::empty(),
    }
}

/// Rows of `input` whose dictionary index equals `index`.
pub fn kernel_index_equals(d: &DictionaryVector, index: u32, input: &SelectionVector) -> SelectionVector {
    index_kernel(d, input, |i| i == index)
}

fn run_kernel(kernel: &Kernel, table: &VectorTable, input: &SelectionVector) -> SelectionVector {
    match kernel {
        Kernel::Values { handle, predicate } => kernel_compare(handle.vector(table), predicate, input),
        Kernel::IndexEquals { handle, index } => match handle.vector(table) {
            Vector::Dictionary(d) => kernel_index_equals(d, *index, input),
            _ => SelectionVector::empty(),
        },
        Kernel::IndexMask { handle, mask } => match handle.vector(table) {
            Vector::Dictionary(d) => index_kernel(d, input, |i| mask[i as usize]),
            _ => SelectionVector::empty(),
        },
        Kernel::Has { handle, negated } => {
            let v = handle.vector(table);
            match v.validity() {
                None if *negated => SelectionVector::empty(),
                None => input.clone(),
                Some(valid) => select_where(input, |r| valid.get(r) != *negated),
            }
        }
        Kernel::TypeMask(mask) => {
            let types = table.geometry.types.as_slice();
            select_where(input, |r| mask[types[r] as usize])
        }
    }
}

/// Sorted difference `a \ b`.
pub fn difference(a: &SelectionVector, b: &SelectionVector) -> SelectionVector {
    let b = b.as_slice();
    let mut j = 0;
    let rows = a
        .as_slice()
        .iter()
        .copied()
        .filter(|&r| {
            while j < b.len() && b[j] < r {
                j += 1;
            }
            !(j < b.len() && b[j] == r)
        })
        .collect();
    SelectionVector::from_rows(rows).expect("subset of a sorted selection")
}

/// Sorted union.
pub fn union(a: &SelectionVector, b: &SelectionVector) -> SelectionVector {
    let (a, b) = (a.as_slice(), b.as_slice());
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    SelectionVector::from_rows(out).expect("merge of sorted selections")
}

fn eval_node(plan: &FilterPlan, node: usize, table: &VectorTable, input: &SelectionVector) -> SelectionVector {
    if input.is_empty() {
        return SelectionVector::empty();
    }
    match &plan.nodes[node] {
        PlanNode::Const(true) => input.clone(),
        PlanNode::Const(false) => SelectionVector::empty(),
        PlanNode::Kernel(k) => run_kernel(k, table, input),
        PlanNode::All(kids) => {
            let mut sel = input.clone();
            for &k in kids {
                sel = eval_node(plan, k, table, &sel);
            }
            sel
        }
        PlanNode::Any(kids) | PlanNode::None(kids) => {
            // each child only sees rows not matched yet
            let mut matched = SelectionVector::empty();
            let mut rest = input.clone();
            for &k in kids {
                let hit = eval_node(plan, k, table, &rest);
                if hit.is_empty() {
                    continue;
                }
                rest = difference(&rest, &hit);
                matched = union(&matched, &hit);
            }
            if matches!(plan.nodes[node], PlanNode::Any(_)) {
                matched
            } else {
                rest
            }
        }
    }
}

/// Runs a compiled plan over every row of the table.
pub fn evaluate(plan: &FilterPlan, table: &VectorTable) -> SelectionVector {
    eval_node(plan, plan.nodes.len() - 1, table, &SelectionVector::all(table.rows))
}

/// Runs a compiled plan over the rows of `input` only.
pub fn evaluate_on(plan: &FilterPlan, table: &VectorTable, input: &SelectionVector) -> SelectionVector {
    eval_node(plan, plan.nodes.len() - 1, table, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::EncodingProfile;
    use crate::memory::{decode_vector_tile, dictionary_lookups, reset_dictionary_lookups, AlignedBuf};
    use crate::model::{Column, Geometry, Tile, TileCoord, Vertex};
    use crate::storage::{encode_tile, DecodeOptions};

    fn sel(rows: &[u32]) -> SelectionVector {
        SelectionVector::from_rows(rows.to_vec()).unwrap()
    }

    fn table(columns: Vec<Column>) -> FeatureTable {
        let n = columns[0].values.len();
        let mut t = FeatureTable::new("t");
        t.ids = (0..n as u64).collect();
        t.geometries = (0..n).map(|i| Geometry::Point(Vertex::new(i as i32, 0))).collect();
        t.columns = columns;
        t
    }

    fn vectors(t: &FeatureTable) -> VectorTable {
        let tile = Tile { coord: TileCoord::default(), tables: vec![t.clone()] };
        let bytes = encode_tile(&tile, EncodingProfile::Advanced, false).unwrap();
        decode_vector_tile(&bytes, &DecodeOptions::default()).unwrap().remove(0)
    }

    fn both(src: &str, t: &FeatureTable) -> Vec<u32> {
        let e = parse(src).unwrap();
        let vt = vectors(t);
        let fast = evaluate(&compile(&e, &vt).unwrap(), &vt);
        let slow = evaluate_tuple_at_a_time(&e, t).unwrap();
        assert_eq!(fast, slow, "{src}");
        fast.into_vec()
    }

    fn ints(name: &str, xs: &[Option<i64>]) -> Column {
        Column::new(
            ColumnDef::scalar(name, ScalarType::Int64, true),
            xs.iter().map(|x| x.map_or(Value::Null, Value::I64)).collect(),
        )
    }

    #[test]
    fn parse_print_round_trip() {
        let src = r#"(all (== class "river") (has name) (!in "name:en" 1 -2.5 true) (none) ($type))"#;
        assert!(parse(src).is_err());
        let src = r#"(all (== class "river") (has name) (!in "a b" 1 -2.5 true) (none) (== $type "Polygon"))"#;
        let e = parse(src).unwrap();
        assert_eq!(e.to_string(), src);
        assert_eq!(parse(&e.to_string()).unwrap(), e);
        assert!(matches!(parse("(== a)"), Err(FilterError::Parse { .. })));
    }

    #[test]
    fn comparisons_and_nulls() {
        let t = table(vec![ints("n", &[Some(1), Some(5), Some(3)])]);
        assert_eq!(both("(> n 2)", &t), [1, 2]);
        let t = table(vec![ints("n", &[Some(4), None, Some(4)])]);
        assert_eq!(both("(== n 4)", &t), [0, 2]);
        assert_eq!(both("(!= n 4)", &t), Vec::<u32>::new());
        assert_eq!(both("(!in n 5)", &t), [0, 2]);
        assert_eq!(both("(!has n)", &t), [1]);
        let t = table(vec![ints("n", &[Some(1), Some(2), Some(3), Some(4)])]);
        assert_eq!(both("(all (> n 1) (< n 4))", &t), [1, 2]);
        assert_eq!(both("(any (< n 2) (> n 3))", &t), [0, 3]);
        assert_eq!(both("(none (< n 2) (> n 3))", &t), [1, 2]);
    }

    #[test]
    fn schema_resolution() {
        let t = table(vec![ints("n", &[Some(1)])]);
        let vt = vectors(&t);
        let plan = compile(&parse("(has name)").unwrap(), &vt).unwrap();
        assert_eq!(plan.constant(), Some(false));
        assert_eq!(compile(&parse("(all)").unwrap(), &vt).unwrap().constant(), Some(true));
        assert!(matches!(
            compile(&parse(r#"(== n "x")"#).unwrap(), &vt),
            Err(FilterError::TypeMismatch { .. })
        ));
        assert!(evaluate_tuple_at_a_time(&parse(r#"(== n "x")"#).unwrap(), &t).is_err());
    }

    #[test]
    fn dictionary_rewrite() {
        let classes = ["lake", "ocean", "lake", "pond", "river", "lake", "river"];
        let t = table(vec![Column::new(
            ColumnDef::scalar("class", ScalarType::String, false),
            classes.iter().map(|s| Value::String(s.to_string())).collect(),
        )]);
        let vt = vectors(&t);
        let Vector::Dictionary(_) = vt.column("class").unwrap() else { panic!("expected dictionary") };
        let plan = compile(&parse(r#"(== class "river")"#).unwrap(), &vt).unwrap();
        assert!(matches!(plan.root(), PlanNode::Kernel(Kernel::IndexEquals { index: 3, .. })));
        reset_dictionary_lookups();
        assert_eq!(evaluate(&plan, &vt).as_slice(), [4, 6]);
        assert_eq!(dictionary_lookups(), 0);
        let plan = compile(&parse(r#"(== class "sea")"#).unwrap(), &vt).unwrap();
        assert_eq!(plan.constant(), Some(false));
        assert_eq!(both(r#"(in class "pond" "ocean")"#, &t), [1, 3]);
        assert_eq!(both(r#"(> class "lake")"#, &t), [1, 3, 4, 6]);
    }

    #[test]
    fn kernel_examples() {
        let v = Vector::I64(FlatVector::new(AlignedBuf::from_slice(&[10, 20, 30]), None));
        let p = Predicate::Number(CmpOp::Lt, 25.0);
        assert_eq!(kernel_compare(&v, &p, &SelectionVector::all(3)), sel(&[0, 1]));
        assert_eq!(kernel_compare(&v, &p, &sel(&[2])), sel(&[]));
        let d = DictionaryVector {
            indices: FlatVector::new(AlignedBuf::from_slice(&[0, 1, 0]), None),
            dictionary: OffsetVector::from_strs(&["a", "b"]),
        };
        assert_eq!(kernel_index_equals(&d, 0, &SelectionVector::all(3)), sel(&[0, 2]));
    }

    #[test]
    fn geometry_type_and_struct_fields() {
        let mut t = table(vec![Column::new(
            ColumnDef::new("names", ColumnType::Struct(vec![("en".into(), ScalarType::String)]), true),
            vec![Value::Struct(vec![Value::String("x".into())]), Value::Null, Value::Struct(vec![Value::Null])],
        )]);
        t.geometries[1] = Geometry::MultiPoint(vec![Vertex::new(1, 1), Vertex::new(2, 2)]);
        t.geometries[2] = Geometry::LineString(vec![Vertex::new(1, 1), Vertex::new(2, 2)]);
        assert_eq!(both(r#"(== $type "Point")"#, &t), [0, 1]);
        assert_eq!(both(r#"(has names.en)"#, &t), [0]);
        assert_eq!(both(r#"(== names.en "x")"#, &t), [0]);
        assert_eq!(both(r#"(has names)"#, &t), [0, 2]);
    }

    #[test]
    fn suite_parsing() {
        let suite = parse_suite("; water\n(layer \"water\" (== class \"ocean\"))\n(layer \"park\" true)").unwrap();
        assert_eq!(suite.len(), 2);
        assert_eq!(suite[1].filter, FilterExpr::Const(true));
    }
}
