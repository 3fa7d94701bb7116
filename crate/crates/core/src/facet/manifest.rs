use serde::{Deserialize, Serialize};

use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::expr::{parse_expression, EvalError, Expression, Kind, Node, Value};

/// A state or model variable declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub kind: Kind,
    pub init: Expression,
    pub range: Option<(f64, f64)>,
}

impl VarDecl {
    /// Clamps `v` into the declared range; returns the clamped value when it moved.
    pub fn clamp(&self, v: &Value) -> Option<Value> {
        match (self.range, v) {
            (Some((lo, hi)), Value::Number(x)) if *x < lo || *x > hi => {
                Some(Value::Number(x.clamp(lo, hi)))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateOp {
    Set,
    Add,
    Multiply,
}

impl UpdateOp {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateOp::Set => "set",
            UpdateOp::Add => "add",
            UpdateOp::Multiply => "multiply",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "set" => Some(UpdateOp::Set),
            "add" => Some(UpdateOp::Add),
            "multiply" => Some(UpdateOp::Multiply),
            _ => None,
        }
    }

    /// New value of a variable currently holding `current`.
    pub fn apply(self, current: &Value, operand: Value) -> Result<Value, EvalError> {
        let mismatch = |found: &Value| EvalError::TypeMismatch {
            op: self.as_str().to_string(),
            expected: current.kind().to_string(),
            found: found.kind(),
        };
        match (self, current, &operand) {
            (UpdateOp::Set, _, _) if operand.kind() == current.kind() => Ok(operand),
            (UpdateOp::Add, Value::Number(a), Value::Number(b)) => finite(self, a + b),
            (UpdateOp::Multiply, Value::Number(a), Value::Number(b)) => finite(self, a * b),
            (UpdateOp::Add | UpdateOp::Multiply, Value::Number(_), _) => Err(mismatch(&operand)),
            (UpdateOp::Set, _, _) => Err(mismatch(&operand)),
            (_, other, _) => Err(EvalError::TypeMismatch {
                op: self.as_str().to_string(),
                expected: "number".into(),
                found: other.kind(),
            }),
        }
    }
}

fn finite(op: UpdateOp, v: f64) -> Result<Value, EvalError> {
    if v.is_finite() {
        Ok(Value::Number(v))
    } else {
        Err(EvalError::NonFinite(op.as_str().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Update { op: UpdateOp, var: String, value: Expression },
    Match(MatchAction),
}

/// Pairs the acting agent with one agent of another type.
///
/// `target_filter` and `target_actions` see the candidate target as `agent.`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAction {
    pub target_type: String,
    pub target_filter: Expression,
    pub self_actions: Vec<Action>,
    pub target_actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviourDef {
    pub name: String,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTypeDelta {
    pub name: String,
    pub creates_type: bool,
    pub state_vars: Vec<VarDecl>,
    pub behaviours: Vec<BehaviourDef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetManifest {
    pub name: String,
    pub description: Option<String>,
    pub depends_on: Vec<String>,
    pub agent_types: Vec<AgentTypeDelta>,
    pub model_vars: Vec<VarDecl>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    name: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    depends_on: Vec<String>,
    #[serde(default)]
    agent_types: Vec<RawDelta>,
    #[serde(default)]
    model_vars: Vec<RawVar>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelta {
    name: String,
    #[serde(default)]
    creates_type: bool,
    #[serde(default)]
    state_vars: Vec<RawVar>,
    #[serde(default)]
    behaviours: Vec<RawBehaviour>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawInit {
    Bool(bool),
    Number(f64),
    Expr(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVar {
    name: String,
    kind: Kind,
    init: RawInit,
    #[serde(default)]
    range: Option<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBehaviour {
    name: String,
    #[serde(default)]
    actions: Vec<RawAction>,
}

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
enum RawAction {
    Set { var: String, value: RawInit },
    Add { var: String, value: RawInit },
    Multiply { var: String, value: RawInit },
    Match {
        target_type: String,
        #[serde(default)]
        target_filter: Option<String>,
        #[serde(default)]
        self_actions: Vec<RawAction>,
        #[serde(default)]
        target_actions: Vec<RawAction>,
    },
}

/// `[A-Za-z_][A-Za-z0-9_]*`, excluding expression keywords.
pub fn is_identifier(name: &str) -> bool {
    const RESERVED: [&str; 8] = ["if", "then", "else", "and", "or", "not", "true", "false"];
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !RESERVED.contains(&name)
}

/// Parses `"1 + 2"`-style sources, and JSON numbers/booleans as literals.
pub(crate) fn expression_at(
    raw: &RawValueLike,
    path: &str,
    report: &mut ValidationReport,
) -> Option<Expression> {
    match raw {
        RawValueLike::Bool(b) => Some(Expression::from_node(Node::Bool(*b))),
        RawValueLike::Number(v) if v.is_finite() => Some(Expression::constant(*v)),
        RawValueLike::Number(v) => {
            report.error(Diagnostic::at(Code::SchemaViolation, path, format!("non-finite literal {v}")));
            None
        }
        RawValueLike::Expr(src) => parse_at(src, path, report),
    }
}

pub(crate) fn parse_at(src: &str, path: &str, report: &mut ValidationReport) -> Option<Expression> {
    match parse_expression(src) {
        Ok(e) => Some(e),
        Err(e) => {
            report.error(Diagnostic::at(Code::ExpressionParse, path, format!("`{src}`: {e}")));
            None
        }
    }
}

pub(crate) enum RawValueLike<'a> {
    Bool(bool),
    Number(f64),
    Expr(&'a str),
}

impl<'a> From<&'a RawInit> for RawValueLike<'a> {
    fn from(r: &'a RawInit) -> Self {
        match r {
            RawInit::Bool(b) => RawValueLike::Bool(*b),
            RawInit::Number(v) => RawValueLike::Number(*v),
            RawInit::Expr(s) => RawValueLike::Expr(s),
        }
    }
}

fn convert_var(raw: &RawVar, path: &str, report: &mut ValidationReport) -> Option<VarDecl> {
    if !is_identifier(&raw.name) {
        report.error(Diagnostic::at(
            Code::SchemaViolation,
            format!("{path}.name"),
            format!("`{}` is not a valid variable name", raw.name),
        ));
    }
    let range = match raw.range {
        None => None,
        Some([lo, hi]) => {
            if raw.kind != Kind::Number {
                report.error(Diagnostic::at(
                    Code::InvalidRange,
                    format!("{path}.range"),
                    format!("range declared on {} variable `{}`", raw.kind, raw.name),
                ));
            } else if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                report.error(Diagnostic::at(
                    Code::InvalidRange,
                    format!("{path}.range"),
                    format!("invalid range [{lo}, {hi}]"),
                ));
            }
            Some((lo, hi))
        }
    };
    let init = expression_at(&(&raw.init).into(), &format!("{path}.init"), report)?;
    Some(VarDecl { name: raw.name.clone(), kind: raw.kind, init, range })
}

fn convert_actions(
    raw: &[RawAction],
    path: &str,
    nested: bool,
    report: &mut ValidationReport,
) -> Vec<Action> {
    let mut out = Vec::new();
    for (i, a) in raw.iter().enumerate() {
        let here = format!("{path}[{i}]");
        match a {
            RawAction::Set { var, value }
            | RawAction::Add { var, value }
            | RawAction::Multiply { var, value } => {
                let op = match a {
                    RawAction::Set { .. } => UpdateOp::Set,
                    RawAction::Add { .. } => UpdateOp::Add,
                    _ => UpdateOp::Multiply,
                };
                if let Some(value) = expression_at(&value.into(), &format!("{here}.value"), report) {
                    out.push(Action::Update { op, var: var.clone(), value });
                }
            }
            RawAction::Match { target_type, target_filter, self_actions, target_actions } => {
                if nested {
                    report.error(Diagnostic::at(
                        Code::NestedMatch,
                        here.clone(),
                        "match actions cannot contain another match",
                    ));
                    continue;
                }
                let filter = match target_filter {
                    Some(src) => parse_at(src, &format!("{here}.target_filter"), report),
                    None => Some(Expression::from_node(Node::Bool(true))),
                };
                let self_actions =
                    convert_actions(self_actions, &format!("{here}.self_actions"), true, report);
                let target_actions =
                    convert_actions(target_actions, &format!("{here}.target_actions"), true, report);
                if let Some(target_filter) = filter {
                    out.push(Action::Match(MatchAction {
                        target_type: target_type.clone(),
                        target_filter,
                        self_actions,
                        target_actions,
                    }));
                }
            }
        }
    }
    out
}

/// Parses a facet manifest; every expression is parsed up front.
pub fn parse_manifest(document: &str) -> Result<FacetManifest, ValidationReport> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let raw: RawManifest = serde_path_to_error::deserialize(de).map_err(|e| {
        let code = if e.inner().is_syntax() || e.inner().is_eof() {
            Code::MalformedJson
        } else {
            Code::SchemaViolation
        };
        let path = e.path().to_string();
        ValidationReport::from(Diagnostic::at(code, path, e.inner().to_string()))
    })?;

    let mut report = ValidationReport::new();
    if raw.name.trim().is_empty() {
        report.error(Diagnostic::at(Code::SchemaViolation, "name", "facet name is empty"));
    }
    let mut agent_types = Vec::new();
    for (i, d) in raw.agent_types.iter().enumerate() {
        let path = format!("agent_types[{i}]");
        if raw.agent_types[..i].iter().any(|o| o.name == d.name) {
            report.error(Diagnostic::at(
                Code::SchemaViolation,
                format!("{path}.name"),
                format!("agent type `{}` appears twice in one manifest", d.name),
            ));
        }
        let mut state_vars = Vec::new();
        for (j, v) in d.state_vars.iter().enumerate() {
            if let Some(decl) = convert_var(v, &format!("{path}.state_vars[{j}]"), &mut report) {
                state_vars.push(decl);
            }
        }
        let mut behaviours = Vec::new();
        for (j, b) in d.behaviours.iter().enumerate() {
            let bpath = format!("{path}.behaviours[{j}]");
            if b.name.trim().is_empty() || b.name.chars().any(char::is_whitespace) {
                report.error(Diagnostic::at(
                    Code::SchemaViolation,
                    format!("{bpath}.name"),
                    format!("behaviour name `{}` must be non-empty without whitespace", b.name),
                ));
            }
            let actions = convert_actions(&b.actions, &format!("{bpath}.actions"), false, &mut report);
            behaviours.push(BehaviourDef { name: b.name.clone(), actions });
        }
        agent_types.push(AgentTypeDelta {
            name: d.name.clone(),
            creates_type: d.creates_type,
            state_vars,
            behaviours,
        });
    }
    let mut model_vars = Vec::new();
    for (j, v) in raw.model_vars.iter().enumerate() {
        if let Some(decl) = convert_var(v, &format!("model_vars[{j}]"), &mut report) {
            model_vars.push(decl);
        }
    }

    if !report.is_ok() {
        return Err(report);
    }
    Ok(FacetManifest {
        name: raw.name,
        description: raw.description,
        depends_on: raw.depends_on,
        agent_types,
        model_vars,
    })
}
