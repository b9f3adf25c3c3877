//! The expression language models are written in.
//!
//! Programs are immutable trees of [`Expr`] nodes. Arithmetic `+`/`*` and
//! boolean `and`/`or` are n-ary and kept flattened: a constructor never
//! produces a same-op node directly under a same-op node. Node positions are
//! paths of child indices from the root, see [`Path`].

mod decompose;
mod eval;
mod path;

use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

pub use decompose::{
    enumerate_decompositions, fresh_var, local_expressions, substitute, Decomposition,
    Enumeration, EnumerationCaps, MAX_CHAIN_SUBSETS, MAX_OCCURRENCES,
};
pub use eval::{evaluate, reaches, Env, EvalError, HoleEnv, MapEnv};
pub use path::{Path, Site};

/// A runtime value: every expression denotes either a real or a boolean.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Num(f64),
}

impl Value {
    pub fn ty(&self) -> Ty {
        match self {
            Value::Num(_) => Ty::Num,
            Value::Bool(_) => Ty::Bool,
        }
    }

    /// Numeric view; booleans map to 1 and 0.
    pub fn as_f64(&self) -> f64 {
        match *self {
            Value::Num(v) => v,
            Value::Bool(true) => 1.0,
            Value::Bool(false) => 0.0,
        }
    }

    // -0.0 and 0.0 are the same value; all NaNs are one value.
    fn canonical_bits(v: f64) -> u64 {
        if v == 0.0 {
            0
        } else if v.is_nan() {
            f64::NAN.to_bits()
        } else {
            v.to_bits()
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => {
                Value::canonical_bits(*a) == Value::canonical_bits(*b)
            }
            (Value::Bool(a), Value::Bool(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Bool(b) => {
                0u8.hash(state);
                b.hash(state);
            }
            Value::Num(v) => {
                1u8.hash(state);
                Value::canonical_bits(*v).hash(state);
            }
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Booleans sort before numbers; numbers use IEEE total order.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Bool(_), Value::Num(_)) => Ordering::Less,
            (Value::Num(_), Value::Bool(_)) => Ordering::Greater,
            (Value::Num(a), Value::Num(b)) => {
                if self == other {
                    Ordering::Equal
                } else {
                    a.total_cmp(b)
                }
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ty {
    Num,
    Bool,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Num => "numeric",
            Ty::Bool => "boolean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArithOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
}

impl ArithOp {
    pub fn is_nary(self) -> bool {
        matches!(self, ArithOp::Add | ArithOp::Mul)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl RelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Le => "<=",
            RelOp::Lt => "<",
            RelOp::Eq => "=",
            RelOp::Ge => ">=",
            RelOp::Gt => ">",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> bool {
        match self {
            RelOp::Le => a <= b,
            RelOp::Lt => a < b,
            RelOp::Eq => a == b,
            RelOp::Ge => a >= b,
            RelOp::Gt => a > b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoolOp {
    And,
    Or,
    Not,
}

impl BoolOp {
    pub fn is_nary(self) -> bool {
        !matches!(self, BoolOp::Not)
    }
}

/// Construction and typing errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("operator {op} expects {expected} operand(s), got {got}")]
    Arity {
        op: String,
        expected: String,
        got: usize,
    },
    #[error("type error at {position}: expected {expected}, found {found}")]
    Type {
        position: Path,
        expected: Ty,
        found: Ty,
    },
    #[error("if-then-else at {position} has branches of different types ({then_ty} vs {else_ty})")]
    BranchMismatch {
        position: Path,
        then_ty: Ty,
        else_ty: Ty,
    },
    #[error("no node at position {0}")]
    InvalidPosition(String),
    #[error("constant {0} is not finite")]
    NonFinite(f64),
    #[error("malformed program document: {0}")]
    Parse(String),
}

/// Expression node.
///
/// Children are indexed in declaration order: operands in order, `left`=0 and
/// `right`=1 for relations, and `guard`=0, `then`=1, `else`=2 for
/// if-then-else.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "raw::RawExpr")]
pub enum Expr {
    Const {
        value: Value,
    },
    Var {
        name: String,
    },
    Arith {
        op: ArithOp,
        operands: Vec<Expr>,
    },
    Rel {
        op: RelOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    Bool {
        op: BoolOp,
        operands: Vec<Expr>,
    },
    Ite {
        guard: Box<Expr>,
        then: Box<Expr>,
        #[serde(rename = "else")]
        otherwise: Box<Expr>,
    },
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Const { value: Value::Num(v) }
    }

    pub fn boolean(b: bool) -> Expr {
        Expr::Const { value: Value::Bool(b) }
    }

    pub fn constant(value: Value) -> Expr {
        Expr::Const { value }
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var { name: name.into() }
    }

    /// General arithmetic constructor. Flattens same-op children of `+`/`*`
    /// and collapses a one-operand n-ary node to its operand.
    pub fn arith(op: ArithOp, operands: Vec<Expr>) -> Result<Expr, ExprError> {
        if op.is_nary() {
            if operands.is_empty() {
                return Err(ExprError::Arity {
                    op: op.symbol().into(),
                    expected: "at least 1".into(),
                    got: 0,
                });
            }
            let mut flat = Vec::with_capacity(operands.len());
            for e in operands {
                match e {
                    Expr::Arith { op: inner, operands } if inner == op => flat.extend(operands),
                    other => flat.push(other),
                }
            }
            if flat.len() == 1 {
                return Ok(flat.pop().expect("one operand"));
            }
            Ok(Expr::Arith { op, operands: flat })
        } else {
            if operands.len() != 2 {
                return Err(ExprError::Arity {
                    op: op.symbol().into(),
                    expected: "2".into(),
                    got: operands.len(),
                });
            }
            Ok(Expr::Arith { op, operands })
        }
    }

    pub fn add(operands: Vec<Expr>) -> Expr {
        Expr::arith(ArithOp::Add, operands).expect("non-empty sum")
    }

    pub fn mul(operands: Vec<Expr>) -> Expr {
        Expr::arith(ArithOp::Mul, operands).expect("non-empty product")
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Arith {
            op: ArithOp::Sub,
            operands: vec![a, b],
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Arith {
            op: ArithOp::Div,
            operands: vec![a, b],
        }
    }

    pub fn rel(op: RelOp, left: Expr, right: Expr) -> Expr {
        Expr::Rel {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn le(left: Expr, right: Expr) -> Expr {
        Expr::rel(RelOp::Le, left, right)
    }

    pub fn eq(left: Expr, right: Expr) -> Expr {
        Expr::rel(RelOp::Eq, left, right)
    }

    /// General boolean constructor; flattens nested `and`/`or` of the same op.
    pub fn logic(op: BoolOp, operands: Vec<Expr>) -> Result<Expr, ExprError> {
        match op {
            BoolOp::Not => {
                if operands.len() != 1 {
                    return Err(ExprError::Arity {
                        op: "not".into(),
                        expected: "1".into(),
                        got: operands.len(),
                    });
                }
                Ok(Expr::Bool { op, operands })
            }
            BoolOp::And | BoolOp::Or => {
                if operands.is_empty() {
                    return Err(ExprError::Arity {
                        op: format!("{op:?}").to_lowercase(),
                        expected: "at least 1".into(),
                        got: 0,
                    });
                }
                let mut flat = Vec::with_capacity(operands.len());
                for e in operands {
                    match e {
                        Expr::Bool { op: inner, operands } if inner == op => flat.extend(operands),
                        other => flat.push(other),
                    }
                }
                if flat.len() == 1 {
                    return Ok(flat.pop().expect("one operand"));
                }
                Ok(Expr::Bool { op, operands: flat })
            }
        }
    }

    pub fn and(operands: Vec<Expr>) -> Expr {
        Expr::logic(BoolOp::And, operands).expect("non-empty conjunction")
    }

    pub fn or(operands: Vec<Expr>) -> Expr {
        Expr::logic(BoolOp::Or, operands).expect("non-empty disjunction")
    }

    pub fn not(e: Expr) -> Expr {
        Expr::Bool {
            op: BoolOp::Not,
            operands: vec![e],
        }
    }

    pub fn ite(guard: Expr, then: Expr, otherwise: Expr) -> Expr {
        Expr::Ite {
            guard: Box::new(guard),
            then: Box::new(then),
            otherwise: Box::new(otherwise),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const { .. })
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const { .. } | Expr::Var { .. } => Vec::new(),
            Expr::Arith { operands, .. } | Expr::Bool { operands, .. } => operands.iter().collect(),
            Expr::Rel { left, right, .. } => vec![left, right],
            Expr::Ite {
                guard,
                then,
                otherwise,
            } => vec![guard, then, otherwise],
        }
    }

    pub fn child(&self, i: usize) -> Option<&Expr> {
        match self {
            Expr::Const { .. } | Expr::Var { .. } => None,
            Expr::Arith { operands, .. } | Expr::Bool { operands, .. } => operands.get(i),
            Expr::Rel { left, right, .. } => match i {
                0 => Some(left),
                1 => Some(right),
                _ => None,
            },
            Expr::Ite {
                guard,
                then,
                otherwise,
            } => match i {
                0 => Some(guard),
                1 => Some(then),
                2 => Some(otherwise),
                _ => None,
            },
        }
    }

    /// Rebuilds this node with new children, re-flattening n-ary chains.
    /// Panics if the number of children does not fit the operator.
    pub fn with_children(&self, children: Vec<Expr>) -> Expr {
        match self {
            Expr::Const { .. } | Expr::Var { .. } => self.clone(),
            Expr::Arith { op, .. } => {
                Expr::arith(*op, children).expect("arity preserved by rebuild")
            }
            Expr::Bool { op, .. } => Expr::logic(*op, children).expect("arity preserved by rebuild"),
            Expr::Rel { op, .. } => {
                let mut it = children.into_iter();
                let l = it.next().expect("left");
                let r = it.next().expect("right");
                Expr::rel(*op, l, r)
            }
            Expr::Ite { .. } => {
                let mut it = children.into_iter();
                let g = it.next().expect("guard");
                let t = it.next().expect("then");
                let e = it.next().expect("else");
                Expr::ite(g, t, e)
            }
        }
    }

    /// Total node count.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    /// Number of nodes that are not constants.
    pub fn variable_size(&self) -> usize {
        if self.is_const() {
            0
        } else {
            1 + self
                .children()
                .iter()
                .map(|c| c.variable_size())
                .sum::<usize>()
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        if let Expr::Var { name } = self {
            out.insert(name.clone());
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Expr::Var { name: n } => n == name,
            _ => self.children().iter().any(|c| c.mentions(name)),
        }
    }

    pub fn at(&self, path: &Path) -> Option<&Expr> {
        let mut cur = self;
        for &i in path.indices() {
            cur = cur.child(i)?;
        }
        Some(cur)
    }

    /// All node positions in preorder.
    pub fn positions(&self) -> Vec<Path> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.walk_positions(&mut stack, &mut out);
        out
    }

    fn walk_positions(&self, stack: &mut Vec<usize>, out: &mut Vec<Path>) {
        out.push(Path::new(stack.clone()));
        for (i, c) in self.children().into_iter().enumerate() {
            stack.push(i);
            c.walk_positions(stack, out);
            stack.pop();
        }
    }

    /// Returns a copy with the node at `path` replaced. The path must be
    /// valid; re-flattening only happens at the replaced node's parent.
    pub fn replace_at(&self, path: &Path, replacement: Expr) -> Result<Expr, ExprError> {
        if self.at(path).is_none() {
            return Err(ExprError::InvalidPosition(path.to_string()));
        }
        Ok(self.replace_rec(path.indices(), replacement))
    }

    fn replace_rec(&self, rest: &[usize], replacement: Expr) -> Expr {
        match rest.split_first() {
            None => replacement,
            Some((&i, tail)) => {
                let mut children: Vec<Expr> = self.children().into_iter().cloned().collect();
                children[i] = children[i].replace_rec(tail, replacement);
                self.with_children(children)
            }
        }
    }

    /// Copy with every occurrence of variable `name` replaced by `with`,
    /// re-flattening along the way. No type checking.
    pub(crate) fn replace_var(&self, name: &str, with: &Expr) -> Expr {
        match self {
            Expr::Var { name: n } if n == name => with.clone(),
            Expr::Const { .. } | Expr::Var { .. } => self.clone(),
            _ => {
                let children = self
                    .children()
                    .into_iter()
                    .map(|c| c.replace_var(name, with))
                    .collect();
                self.with_children(children)
            }
        }
    }

    /// Canonical form used for structural identity: n-ary chains are
    /// flattened and `+`/`*` operands sorted by their printed form.
    pub fn canonical(&self) -> Expr {
        match self {
            Expr::Const { .. } | Expr::Var { .. } => self.clone(),
            Expr::Arith { op, operands } if op.is_nary() => {
                let mut ops: Vec<(String, Expr)> = operands
                    .iter()
                    .map(|o| {
                        let c = o.canonical();
                        (c.to_string(), c)
                    })
                    .collect();
                ops.sort_by(|a, b| a.0.cmp(&b.0));
                Expr::arith(*op, ops.into_iter().map(|(_, e)| e).collect())
                    .expect("non-empty chain")
            }
            _ => self.with_children(self.children().into_iter().map(Expr::canonical).collect()),
        }
    }

    /// Structural identity modulo operand order of commutative arithmetic.
    pub fn structurally_eq(&self, other: &Expr) -> bool {
        self == other || self.canonical() == other.canonical()
    }

    /// Static type, with every variable numeric except those listed in
    /// `overrides`.
    pub fn type_of(&self, overrides: &[(&str, Ty)]) -> Result<Ty, ExprError> {
        let mut stack = Vec::new();
        self.type_rec(overrides, &mut stack)
    }

    fn type_rec(&self, ov: &[(&str, Ty)], stack: &mut Vec<usize>) -> Result<Ty, ExprError> {
        let expect = |stack: &mut Vec<usize>, e: &Expr, i: usize, want: Ty| -> Result<(), ExprError> {
            stack.push(i);
            let got = e.type_rec(ov, stack)?;
            if got != want {
                let position = Path::new(stack.clone());
                stack.pop();
                return Err(ExprError::Type {
                    position,
                    expected: want,
                    found: got,
                });
            }
            stack.pop();
            Ok(())
        };
        match self {
            Expr::Const { value } => Ok(value.ty()),
            Expr::Var { name } => Ok(ov
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| *t)
                .unwrap_or(Ty::Num)),
            Expr::Arith { operands, .. } => {
                for (i, o) in operands.iter().enumerate() {
                    expect(stack, o, i, Ty::Num)?;
                }
                Ok(Ty::Num)
            }
            Expr::Rel { left, right, .. } => {
                expect(stack, left, 0, Ty::Num)?;
                expect(stack, right, 1, Ty::Num)?;
                Ok(Ty::Bool)
            }
            Expr::Bool { operands, .. } => {
                for (i, o) in operands.iter().enumerate() {
                    expect(stack, o, i, Ty::Bool)?;
                }
                Ok(Ty::Bool)
            }
            Expr::Ite {
                guard,
                then,
                otherwise,
            } => {
                expect(stack, guard, 0, Ty::Bool)?;
                stack.push(1);
                let t = then.type_rec(ov, stack)?;
                stack.pop();
                stack.push(2);
                let e = otherwise.type_rec(ov, stack)?;
                stack.pop();
                if t != e {
                    return Err(ExprError::BranchMismatch {
                        position: Path::new(stack.clone()),
                        then_ty: t,
                        else_ty: e,
                    });
                }
                Ok(t)
            }
        }
    }

    pub fn check(&self) -> Result<Ty, ExprError> {
        self.type_of(&[])
    }

    /// Program exchange format (tree-shaped JSON).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("expressions always serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("expressions always serialize")
    }

    pub fn from_json(text: &str) -> Result<Expr, ExprError> {
        serde_json::from_str(text).map_err(|e| ExprError::Parse(e.to_string()))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const { value } => write!(f, "{value}"),
            Expr::Var { name } => f.write_str(name),
            Expr::Arith { op, operands } => {
                f.write_str("(")?;
                for (i, o) in operands.iter().enumerate() {
                    if i > 0 {
                        write!(f, " {} ", op.symbol())?;
                    }
                    write!(f, "{o}")?;
                }
                f.write_str(")")
            }
            Expr::Rel { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            Expr::Bool { op: BoolOp::Not, operands } => write!(f, "(not {})", operands[0]),
            Expr::Bool { op, operands } => {
                let word = if *op == BoolOp::And { "and" } else { "or" };
                f.write_str("(")?;
                for (i, o) in operands.iter().enumerate() {
                    if i > 0 {
                        write!(f, " {word} ")?;
                    }
                    write!(f, "{o}")?;
                }
                f.write_str(")")
            }
            Expr::Ite {
                guard,
                then,
                otherwise,
            } => write!(f, "(if {guard} then {then} else {otherwise})"),
        }
    }
}

mod raw {
    use super::*;

    /// Unvalidated mirror of [`Expr`] used while parsing.
    #[derive(Deserialize)]
    #[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
    pub(super) enum RawExpr {
        Const {
            value: Value,
        },
        Var {
            name: String,
        },
        Arith {
            op: ArithOp,
            operands: Vec<RawExpr>,
        },
        Rel {
            op: RelOp,
            left: Box<RawExpr>,
            right: Box<RawExpr>,
        },
        Bool {
            op: BoolOp,
            operands: Vec<RawExpr>,
        },
        Ite {
            guard: Box<RawExpr>,
            then: Box<RawExpr>,
            #[serde(rename = "else")]
            otherwise: Box<RawExpr>,
        },
    }

    impl TryFrom<RawExpr> for Expr {
        type Error = ExprError;

        fn try_from(raw: RawExpr) -> Result<Self, Self::Error> {
            let convert = |v: Vec<RawExpr>| -> Result<Vec<Expr>, ExprError> {
                v.into_iter().map(Expr::try_from).collect()
            };
            Ok(match raw {
                RawExpr::Const { value } => {
                    if let Value::Num(v) = value {
                        if !v.is_finite() {
                            return Err(ExprError::NonFinite(v));
                        }
                    }
                    Expr::Const { value }
                }
                RawExpr::Var { name } => Expr::Var { name },
                RawExpr::Arith { op, operands } => Expr::arith(op, convert(operands)?)?,
                RawExpr::Rel { op, left, right } => {
                    Expr::rel(op, Expr::try_from(*left)?, Expr::try_from(*right)?)
                }
                RawExpr::Bool { op, operands } => Expr::logic(op, convert(operands)?)?,
                RawExpr::Ite {
                    guard,
                    then,
                    otherwise,
                } => Expr::ite(
                    Expr::try_from(*guard)?,
                    Expr::try_from(*then)?,
                    Expr::try_from(*otherwise)?,
                ),
            })
        }
    }
}
