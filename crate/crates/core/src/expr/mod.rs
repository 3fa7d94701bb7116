//! Pure expression language for trigger values, criteria, action operands,
//! policy conditions and variable initializers.
//!
//! ```text
//! expr     := "if" expr "then" expr "else" expr | or
//! or       := and ("or" and)*
//! and      := not ("and" not)*
//! not      := "not" not | compare
//! compare  := additive (("<" | "<=" | ">" | ">=" | "==" | "!=") additive)?
//! additive := term (("+" | "-") term)*
//! term     := unary (("*" | "/" | "%") unary)*
//! unary    := "-" unary | primary
//! primary  := NUMBER | "true" | "false" | STRING
//!           | ("agent" | "model") "." IDENT
//!           | FUNC "(" [expr ("," expr)*] ")"
//!           | "(" expr ")"
//! FUNC     := "min" | "max" | "clamp" | "abs" | "floor" | "ceil"
//! ```
//!
//! Evaluation never draws random numbers or mutates state.

mod ast;
mod eval;
mod parser;
mod types;

pub use ast::{format_number, BinaryOp, Expression, Function, Node, Scope, UnaryOp, VarRef};
pub use eval::{eval_node, evaluate, Bindings, EvalContext, EvalError, Kind, SplitBindings, Value};
pub use parser::{parse_expression, ParseError, ParseErrorKind};
pub use types::{infer_kind, TypeError};

use std::collections::BTreeSet;

/// The set of namespaced variables an expression reads.
pub fn free_variables(expr: &Expression) -> BTreeSet<VarRef> {
    expr.free_variables()
}
