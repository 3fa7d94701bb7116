use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// Namespace of a variable reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Agent,
    Model,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Agent => "agent",
            Scope::Model => "model",
        }
    }
}

/// A namespaced variable name such as `agent.income` or `model.tick`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarRef {
    pub scope: Scope,
    pub name: String,
}

impl VarRef {
    pub fn agent(name: impl Into<String>) -> Self {
        Self { scope: Scope::Agent, name: name.into() }
    }

    pub fn model(name: impl Into<String>) -> Self {
        Self { scope: Scope::Model, name: name.into() }
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.scope.as_str(), self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Rem => "%",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => prec::OR,
            BinaryOp::And => prec::AND,
            BinaryOp::Lt
            | BinaryOp::Le
            | BinaryOp::Gt
            | BinaryOp::Ge
            | BinaryOp::Eq
            | BinaryOp::Ne => prec::COMPARE,
            BinaryOp::Add | BinaryOp::Sub => prec::ADD,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => prec::MUL,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == prec::COMPARE
    }
}

/// Built-in function table. Expressions cannot define functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Function {
    Min,
    Max,
    Clamp,
    Abs,
    Floor,
    Ceil,
}

impl Function {
    pub const ALL: [Function; 6] = [
        Function::Min,
        Function::Max,
        Function::Clamp,
        Function::Abs,
        Function::Floor,
        Function::Ceil,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Function::Min => "min",
            Function::Max => "max",
            Function::Clamp => "clamp",
            Function::Abs => "abs",
            Function::Floor => "floor",
            Function::Ceil => "ceil",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Function::Min | Function::Max => 2,
            Function::Clamp => 3,
            Function::Abs | Function::Floor | Function::Ceil => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Number(f64),
    Bool(bool),
    Text(Arc<str>),
    Var(VarRef),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    If(Box<Node>, Box<Node>, Box<Node>),
    Call(Function, Vec<Node>),
}

pub(crate) mod prec {
    pub const COND: u8 = 1;
    pub const OR: u8 = 2;
    pub const AND: u8 = 3;
    pub const NOT: u8 = 4;
    pub const COMPARE: u8 = 5;
    pub const ADD: u8 = 6;
    pub const MUL: u8 = 7;
    pub const UNARY: u8 = 8;
    pub const ATOM: u8 = 9;
}

impl Node {
    pub fn num(v: f64) -> Self {
        Node::Number(v)
    }

    pub fn var(v: VarRef) -> Self {
        Node::Var(v)
    }

    pub fn binary(op: BinaryOp, lhs: Node, rhs: Node) -> Self {
        Node::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn unary(op: UnaryOp, operand: Node) -> Self {
        Node::Unary(op, Box::new(operand))
    }

    pub fn cond(c: Node, a: Node, b: Node) -> Self {
        Node::If(Box::new(c), Box::new(a), Box::new(b))
    }

    fn precedence(&self) -> u8 {
        match self {
            Node::Number(v) if v.is_sign_negative() => prec::UNARY,
            Node::Number(_) | Node::Bool(_) | Node::Text(_) | Node::Var(_) | Node::Call(..) => {
                prec::ATOM
            }
            Node::Unary(UnaryOp::Neg, _) => prec::UNARY,
            Node::Unary(UnaryOp::Not, _) => prec::NOT,
            Node::Binary(op, ..) => op.precedence(),
            Node::If(..) => prec::COND,
        }
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<VarRef>) {
        match self {
            Node::Number(_) | Node::Bool(_) | Node::Text(_) => {}
            Node::Var(v) => {
                out.insert(v.clone());
            }
            Node::Unary(_, a) => a.collect_vars(out),
            Node::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Node::If(c, a, b) => {
                c.collect_vars(out);
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Number(_) | Node::Bool(_) | Node::Text(_) | Node::Var(_) => 1,
            Node::Unary(_, a) => 1 + a.depth(),
            Node::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
            Node::If(c, a, b) => 1 + c.depth().max(a.depth()).max(b.depth()),
            Node::Call(_, args) => 1 + args.iter().map(Node::depth).max().unwrap_or(0),
        }
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let wrap = self.precedence() < min;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Node::Number(v) => write_number(f, *v)?,
            Node::Bool(b) => write!(f, "{b}")?,
            Node::Text(s) => write_text(f, s)?,
            Node::Var(v) => write!(f, "{v}")?,
            Node::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                a.write_prec(f, prec::UNARY)?;
            }
            Node::Unary(UnaryOp::Not, a) => {
                f.write_str("not ")?;
                a.write_prec(f, prec::NOT)?;
            }
            Node::Binary(op, a, b) => {
                let p = op.precedence();
                // comparisons do not chain, so both sides bind tighter
                let left_min = if op.is_comparison() { p + 1 } else { p };
                a.write_prec(f, left_min)?;
                write!(f, " {} ", op.symbol())?;
                b.write_prec(f, p + 1)?;
            }
            Node::If(c, a, b) => {
                f.write_str("if ")?;
                c.write_prec(f, prec::COND)?;
                f.write_str(" then ")?;
                a.write_prec(f, prec::COND)?;
                f.write_str(" else ")?;
                b.write_prec(f, prec::COND)?;
            }
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    a.write_prec(f, prec::COND)?;
                }
                f.write_str(")")?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }

    fn write_parenthesized(&self, out: &mut String) {
        match self {
            Node::Number(v) => out.push_str(&format_number(*v)),
            Node::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Node::Text(s) => out.push_str(&quote_text(s)),
            Node::Var(v) => {
                out.push('(');
                out.push_str(&v.to_string());
                out.push(')');
            }
            Node::Unary(op, a) => {
                out.push('(');
                out.push_str(match op {
                    UnaryOp::Neg => "-",
                    UnaryOp::Not => "not ",
                });
                a.write_parenthesized(out);
                out.push(')');
            }
            Node::Binary(op, a, b) => {
                out.push('(');
                a.write_parenthesized(out);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                b.write_parenthesized(out);
                out.push(')');
            }
            Node::If(c, a, b) => {
                out.push_str("(if ");
                c.write_parenthesized(out);
                out.push_str(" then ");
                a.write_parenthesized(out);
                out.push_str(" else ");
                b.write_parenthesized(out);
                out.push(')');
            }
            Node::Call(func, args) => {
                out.push_str(func.name());
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    a.write_parenthesized(out);
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, prec::COND)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

fn write_number(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    f.write_str(&format_number(v))
}

fn quote_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn write_text(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str(&quote_text(s))
}

/// A parsed expression together with the text it was parsed from.
///
/// Equality is structural: two expressions are equal when their trees are,
/// regardless of whitespace or redundant parentheses in the source.
#[derive(Debug, Clone)]
pub struct Expression {
    root: Node,
    source: String,
}

impl Expression {
    pub fn new(root: Node, source: impl Into<String>) -> Self {
        Self { root, source: source.into() }
    }

    /// Builds an expression from a tree; the source is its canonical rendering.
    pub fn from_node(root: Node) -> Self {
        let source = root.to_string();
        Self { root, source }
    }

    /// Numeric literal, shaped as the parser would produce it (negative
    /// values become a negation of a non-negative literal).
    pub fn constant(v: f64) -> Self {
        if v.is_sign_negative() {
            Self::from_node(Node::unary(UnaryOp::Neg, Node::Number(-v)))
        } else {
            Self::from_node(Node::Number(v))
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Every variable referenced anywhere in the tree.
    pub fn free_variables(&self) -> BTreeSet<VarRef> {
        let mut out = BTreeSet::new();
        self.root.collect_vars(&mut out);
        out
    }

    /// Rendering with every operator application and variable reference
    /// wrapped in parentheses, e.g. `min(1, ((agent.income) / 50000))`.
    pub fn to_parenthesized(&self) -> String {
        let mut out = String::new();
        self.root.write_parenthesized(&mut out);
        out
    }

    /// Literal value when the expression is a bare constant.
    pub fn as_constant(&self) -> Option<f64> {
        match &self.root {
            Node::Number(v) => Some(*v),
            Node::Unary(UnaryOp::Neg, inner) => match **inner {
                Node::Number(v) => Some(-v),
                _ => None,
            },
            _ => None,
        }
    }
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
