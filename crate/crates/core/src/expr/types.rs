use thiserror::Error;

use super::ast::{BinaryOp, Expression, Node, UnaryOp, VarRef};
use super::eval::Kind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("unbound variable `{0}`")]
    Unbound(VarRef),
    #[error("{0}")]
    Mismatch(String),
}

/// Infers the result kind of a tree, given the declared kind of each
/// variable. Unknown variables and ill-typed operators are reported.
pub fn infer_kind(node: &Node, env: &dyn Fn(&VarRef) -> Option<Kind>) -> Result<Kind, TypeError> {
    let expect = |what: &str, node: &Node, want: Kind| -> Result<(), TypeError> {
        let got = infer_kind(node, env)?;
        if got == want {
            Ok(())
        } else {
            Err(TypeError::Mismatch(format!("`{what}` expects {want}, found {got} in `{node}`")))
        }
    };
    match node {
        Node::Number(_) => Ok(Kind::Number),
        Node::Bool(_) => Ok(Kind::Boolean),
        Node::Text(_) => Ok(Kind::Text),
        Node::Var(v) => env(v).ok_or_else(|| TypeError::Unbound(v.clone())),
        Node::Unary(UnaryOp::Neg, a) => expect("-", a, Kind::Number).map(|_| Kind::Number),
        Node::Unary(UnaryOp::Not, a) => expect("not", a, Kind::Boolean).map(|_| Kind::Boolean),
        Node::Binary(op @ (BinaryOp::And | BinaryOp::Or), a, b) => {
            expect(op.symbol(), a, Kind::Boolean)?;
            expect(op.symbol(), b, Kind::Boolean)?;
            Ok(Kind::Boolean)
        }
        Node::Binary(op @ (BinaryOp::Eq | BinaryOp::Ne), a, b) => {
            let lhs = infer_kind(a, env)?;
            let rhs = infer_kind(b, env)?;
            if lhs != rhs {
                return Err(TypeError::Mismatch(format!(
                    "`{}` compares {lhs} with {rhs} in `{node}`",
                    op.symbol()
                )));
            }
            Ok(Kind::Boolean)
        }
        Node::Binary(op, a, b) => {
            expect(op.symbol(), a, Kind::Number)?;
            expect(op.symbol(), b, Kind::Number)?;
            Ok(if op.is_comparison() { Kind::Boolean } else { Kind::Number })
        }
        Node::If(c, a, b) => {
            expect("if", c, Kind::Boolean)?;
            let then_kind = infer_kind(a, env)?;
            let else_kind = infer_kind(b, env)?;
            if then_kind != else_kind {
                return Err(TypeError::Mismatch(format!(
                    "branches of `{node}` have different kinds ({then_kind} vs {else_kind})"
                )));
            }
            Ok(then_kind)
        }
        Node::Call(func, args) => {
            for a in args {
                expect(func.name(), a, Kind::Number)?;
            }
            Ok(Kind::Number)
        }
    }
}

impl Expression {
    pub fn infer_kind(&self, env: &dyn Fn(&VarRef) -> Option<Kind>) -> Result<Kind, TypeError> {
        infer_kind(self.root(), env)
    }

    /// Checks that the expression has kind `want` under `env`.
    pub fn check_kind(&self, want: Kind, env: &dyn Fn(&VarRef) -> Option<Kind>) -> Result<(), TypeError> {
        let got = self.infer_kind(env)?;
        if got == want {
            Ok(())
        } else {
            Err(TypeError::Mismatch(format!("expected a {want} expression, `{self}` is {got}")))
        }
    }
}
