use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{BinaryOp, Expression, Function, Node, Scope, UnaryOp, VarRef};

/// Kind of a scalar value; also the declared kind of a state variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Number,
    Boolean,
    Text,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Number => "number",
            Kind::Boolean => "boolean",
            Kind::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Bool(bool),
    Text(Arc<str>),
}

impl Value {
    pub fn kind(&self) -> Kind {
        match self {
            Value::Number(_) => Kind::Number,
            Value::Bool(_) => Kind::Boolean,
            Value::Text(_) => Kind::Text,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn text(s: &str) -> Self {
        Value::Text(Arc::from(s))
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::text(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Text(s) => write!(f, "{s:?}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Number(v) => s.serialize_f64(*v),
            Value::Bool(b) => s.serialize_bool(*b),
            Value::Text(t) => s.serialize_str(t),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Value::Number)
                .ok_or_else(|| serde::de::Error::custom("number out of range")),
            serde_json::Value::Bool(b) => Ok(Value::Bool(b)),
            serde_json::Value::String(s) => Ok(Value::text(&s)),
            other => Err(serde::de::Error::custom(format!(
                "expected number, boolean or string, found {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(VarRef),
    #[error("type mismatch in `{op}`: expected {expected}, found {found}")]
    TypeMismatch { op: String, expected: String, found: Kind },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result from `{0}`")]
    NonFinite(String),
    #[error("invalid arguments to `{func}`: {message}")]
    InvalidArgument { func: &'static str, message: String },
}

/// Read-only variable environment for evaluation.
pub trait Bindings {
    fn lookup(&self, var: &VarRef) -> Option<&Value>;
}

/// Plain map-backed environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalContext {
    pub agent_vars: BTreeMap<String, Value>,
    pub model_vars: BTreeMap<String, Value>,
}

impl EvalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_agent(mut self, name: &str, v: impl Into<Value>) -> Self {
        self.agent_vars.insert(name.to_string(), v.into());
        self
    }

    pub fn with_model(mut self, name: &str, v: impl Into<Value>) -> Self {
        self.model_vars.insert(name.to_string(), v.into());
        self
    }
}

impl Bindings for EvalContext {
    fn lookup(&self, var: &VarRef) -> Option<&Value> {
        match var.scope {
            Scope::Agent => self.agent_vars.get(&var.name),
            Scope::Model => self.model_vars.get(&var.name),
        }
    }
}

/// Agent variables from one map, model variables from another.
pub struct SplitBindings<'a> {
    pub agent: &'a BTreeMap<String, Value>,
    pub model: &'a BTreeMap<String, Value>,
}

impl Bindings for SplitBindings<'_> {
    fn lookup(&self, var: &VarRef) -> Option<&Value> {
        match var.scope {
            Scope::Agent => self.agent.get(&var.name),
            Scope::Model => self.model.get(&var.name),
        }
    }
}

fn mismatch(op: &str, expected: &str, found: &Value) -> EvalError {
    EvalError::TypeMismatch { op: op.to_string(), expected: expected.to_string(), found: found.kind() }
}

fn number(op: &str, v: Value) -> Result<f64, EvalError> {
    match v {
        Value::Number(n) => Ok(n),
        other => Err(mismatch(op, "number", &other)),
    }
}

fn boolean(op: &str, v: Value) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(b),
        other => Err(mismatch(op, "boolean", &other)),
    }
}

fn finite(op: &str, v: f64) -> Result<Value, EvalError> {
    if v.is_finite() {
        Ok(Value::Number(v))
    } else {
        Err(EvalError::NonFinite(op.to_string()))
    }
}

/// Evaluates a tree. `and`, `or` and `if` are short-circuiting; every
/// other operator evaluates all operands left to right.
pub fn eval_node(node: &Node, env: &dyn Bindings) -> Result<Value, EvalError> {
    match node {
        Node::Number(v) => Ok(Value::Number(*v)),
        Node::Bool(b) => Ok(Value::Bool(*b)),
        Node::Text(s) => Ok(Value::Text(s.clone())),
        Node::Var(v) => env.lookup(v).cloned().ok_or_else(|| EvalError::UnboundVariable(v.clone())),
        Node::Unary(UnaryOp::Neg, a) => finite("-", -number("-", eval_node(a, env)?)?),
        Node::Unary(UnaryOp::Not, a) => Ok(Value::Bool(!boolean("not", eval_node(a, env)?)?)),
        Node::Binary(BinaryOp::And, a, b) => {
            if !boolean("and", eval_node(a, env)?)? {
                return Ok(Value::Bool(false));
            }
            Ok(Value::Bool(boolean("and", eval_node(b, env)?)?))
        }
        Node::Binary(BinaryOp::Or, a, b) => {
            if boolean("or", eval_node(a, env)?)? {
                return Ok(Value::Bool(true));
            }
            Ok(Value::Bool(boolean("or", eval_node(b, env)?)?))
        }
        Node::Binary(op, a, b) => {
            let lhs = eval_node(a, env)?;
            let rhs = eval_node(b, env)?;
            binary(*op, lhs, rhs)
        }
        Node::If(c, a, b) => {
            if boolean("if", eval_node(c, env)?)? {
                eval_node(a, env)
            } else {
                eval_node(b, env)
            }
        }
        Node::Call(func, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(number(func.name(), eval_node(a, env)?)?);
            }
            call(*func, &vals)
        }
    }
}

fn binary(op: BinaryOp, lhs: Value, rhs: Value) -> Result<Value, EvalError> {
    let sym = op.symbol();
    match op {
        BinaryOp::Eq | BinaryOp::Ne => {
            let same = match (&lhs, &rhs) {
                (Value::Number(x), Value::Number(y)) => x == y,
                (Value::Bool(x), Value::Bool(y)) => x == y,
                (Value::Text(x), Value::Text(y)) => x == y,
                _ => {
                    return Err(EvalError::TypeMismatch {
                        op: sym.to_string(),
                        expected: format!("{} operand", lhs.kind()),
                        found: rhs.kind(),
                    })
                }
            };
            Ok(Value::Bool(if op == BinaryOp::Eq { same } else { !same }))
        }
        _ => {
            let x = number(sym, lhs)?;
            let y = number(sym, rhs)?;
            match op {
                BinaryOp::Add => finite(sym, x + y),
                BinaryOp::Sub => finite(sym, x - y),
                BinaryOp::Mul => finite(sym, x * y),
                BinaryOp::Div | BinaryOp::Rem => {
                    if y == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    finite(sym, if op == BinaryOp::Div { x / y } else { x % y })
                }
                BinaryOp::Lt => Ok(Value::Bool(x < y)),
                BinaryOp::Le => Ok(Value::Bool(x <= y)),
                BinaryOp::Gt => Ok(Value::Bool(x > y)),
                BinaryOp::Ge => Ok(Value::Bool(x >= y)),
                BinaryOp::Eq | BinaryOp::Ne | BinaryOp::And | BinaryOp::Or => unreachable!(),
            }
        }
    }
}

fn call(func: Function, args: &[f64]) -> Result<Value, EvalError> {
    let v = match func {
        Function::Min => args[0].min(args[1]),
        Function::Max => args[0].max(args[1]),
        Function::Clamp => {
            let (x, lo, hi) = (args[0], args[1], args[2]);
            if lo > hi {
                return Err(EvalError::InvalidArgument {
                    func: "clamp",
                    message: format!("lower bound {lo} exceeds upper bound {hi}"),
                });
            }
            x.clamp(lo, hi)
        }
        Function::Abs => args[0].abs(),
        Function::Floor => args[0].floor(),
        Function::Ceil => args[0].ceil(),
    };
    finite(func.name(), v)
}

impl Expression {
    pub fn eval(&self, env: &dyn Bindings) -> Result<Value, EvalError> {
        eval_node(self.root(), env)
    }

    pub fn eval_number(&self, env: &dyn Bindings) -> Result<f64, EvalError> {
        number("expression", self.eval(env)?)
    }

    pub fn eval_bool(&self, env: &dyn Bindings) -> Result<bool, EvalError> {
        boolean("expression", self.eval(env)?)
    }
}

/// Evaluates `expr` against `ctx`.
pub fn evaluate(expr: &Expression, ctx: &dyn Bindings) -> Result<Value, EvalError> {
    expr.eval(ctx)
}
