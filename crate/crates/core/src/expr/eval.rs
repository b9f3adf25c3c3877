use std::cell::Cell;
use std::collections::BTreeMap;

use super::{ArithOp, BoolOp, Expr, Path, Ty, Value};

/// A feature assignment programs are evaluated against.
pub trait Env {
    fn get(&self, name: &str) -> Option<Value>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero at position {0}")]
    DivisionByZero(Path),
    #[error("expected a {expected} value at position {position}")]
    Type { position: Path, expected: Ty },
    #[error("no node at position {0}")]
    InvalidPosition(Path),
}

/// Owned name-to-value assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapEnv(pub BTreeMap<String, Value>);

impl MapEnv {
    pub fn new() -> MapEnv {
        MapEnv::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<Value>) -> MapEnv {
        self.0.insert(name.to_string(), value.into());
        self
    }
}

impl Env for MapEnv {
    fn get(&self, name: &str) -> Option<Value> {
        self.0.get(name).copied()
    }
}

impl<F: Fn(&str) -> Option<Value>> Env for F {
    fn get(&self, name: &str) -> Option<Value> {
        self(name)
    }
}

/// Binds a decomposition's hole variable on top of a row, and records
/// whether evaluation ever read it.
pub struct HoleEnv<'a, E: Env + ?Sized> {
    inner: &'a E,
    hole: &'a str,
    value: Value,
    touched: Cell<bool>,
}

impl<'a, E: Env + ?Sized> HoleEnv<'a, E> {
    pub fn new(inner: &'a E, hole: &'a str, value: Value) -> Self {
        HoleEnv {
            inner,
            hole,
            value,
            touched: Cell::new(false),
        }
    }

    pub fn touched(&self) -> bool {
        self.touched.get()
    }
}

impl<E: Env + ?Sized> Env for HoleEnv<'_, E> {
    fn get(&self, name: &str) -> Option<Value> {
        if name == self.hole {
            self.touched.set(true);
            Some(self.value)
        } else {
            self.inner.get(name)
        }
    }
}

trait Tracer {
    fn visit(&mut self, path: &[usize]);
}

struct NoTrace;

impl Tracer for NoTrace {
    #[inline]
    fn visit(&mut self, _: &[usize]) {}
}

struct FindNode<'a> {
    target: &'a [usize],
    found: bool,
}

impl Tracer for FindNode<'_> {
    fn visit(&mut self, path: &[usize]) {
        if path == self.target {
            self.found = true;
        }
    }
}

struct Interp<'e, E: Env + ?Sized, T: Tracer> {
    env: &'e E,
    tracer: T,
    path: Vec<usize>,
}

impl<E: Env + ?Sized, T: Tracer> Interp<'_, E, T> {
    fn here(&self) -> Path {
        Path::new(self.path.clone())
    }

    fn child(&mut self, i: usize, e: &Expr) -> Result<Value, EvalError> {
        self.path.push(i);
        let v = self.eval(e);
        self.path.pop();
        v
    }

    fn num_child(&mut self, i: usize, e: &Expr) -> Result<f64, EvalError> {
        match self.child(i, e)? {
            Value::Num(v) => Ok(v),
            Value::Bool(_) => {
                self.path.push(i);
                let position = self.here();
                self.path.pop();
                Err(EvalError::Type {
                    position,
                    expected: Ty::Num,
                })
            }
        }
    }

    fn bool_child(&mut self, i: usize, e: &Expr) -> Result<bool, EvalError> {
        match self.child(i, e)? {
            Value::Bool(b) => Ok(b),
            Value::Num(_) => {
                self.path.push(i);
                let position = self.here();
                self.path.pop();
                Err(EvalError::Type {
                    position,
                    expected: Ty::Bool,
                })
            }
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, EvalError> {
        self.tracer.visit(&self.path);
        match e {
            Expr::Const { value } => Ok(*value),
            Expr::Var { name } => self
                .env
                .get(name)
                .ok_or_else(|| EvalError::UnboundVariable(name.clone())),
            Expr::Arith { op, operands } => {
                let mut acc = self.num_child(0, &operands[0])?;
                for (i, o) in operands.iter().enumerate().skip(1) {
                    let v = self.num_child(i, o)?;
                    acc = match op {
                        ArithOp::Add => acc + v,
                        ArithOp::Sub => acc - v,
                        ArithOp::Mul => acc * v,
                        ArithOp::Div => {
                            if v == 0.0 {
                                return Err(EvalError::DivisionByZero(self.here()));
                            }
                            acc / v
                        }
                    };
                }
                Ok(Value::Num(acc))
            }
            Expr::Rel { op, left, right } => {
                let a = self.num_child(0, left)?;
                let b = self.num_child(1, right)?;
                Ok(Value::Bool(op.apply(a, b)))
            }
            Expr::Bool { op, operands } => match op {
                BoolOp::Not => Ok(Value::Bool(!self.bool_child(0, &operands[0])?)),
                BoolOp::And => {
                    for (i, o) in operands.iter().enumerate() {
                        if !self.bool_child(i, o)? {
                            return Ok(Value::Bool(false));
                        }
                    }
                    Ok(Value::Bool(true))
                }
                BoolOp::Or => {
                    for (i, o) in operands.iter().enumerate() {
                        if self.bool_child(i, o)? {
                            return Ok(Value::Bool(true));
                        }
                    }
                    Ok(Value::Bool(false))
                }
            },
            Expr::Ite {
                guard,
                then,
                otherwise,
            } => {
                if self.bool_child(0, guard)? {
                    self.child(1, then)
                } else {
                    self.child(2, otherwise)
                }
            }
        }
    }
}

/// Denotation of `p` on one row. `and`/`or` short-circuit left to right and
/// only the selected branch of an if-then-else is evaluated.
pub fn evaluate<E: Env + ?Sized>(p: &Expr, row: &E) -> Result<Value, EvalError> {
    Interp {
        env: row,
        tracer: NoTrace,
        path: Vec::new(),
    }
    .eval(p)
}

/// Whether evaluating `p` on `row` evaluates the node at `pos`.
pub fn reaches<E: Env + ?Sized>(p: &Expr, pos: &Path, row: &E) -> Result<bool, EvalError> {
    if p.at(pos).is_none() {
        return Err(EvalError::InvalidPosition(pos.clone()));
    }
    let mut interp = Interp {
        env: row,
        tracer: FindNode {
            target: pos.indices(),
            found: false,
        },
        path: Vec::new(),
    };
    interp.eval(p)?;
    Ok(interp.tracer.found)
}
