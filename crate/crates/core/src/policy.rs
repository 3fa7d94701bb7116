//! Policy interventions: a condition selecting agents of one type plus an
//! action on one of their variables, applied at the start of every tick.
//!
//! ```json
//! {"name": "insurance-subsidy", "target_agent_type": "Migrant",
//!  "condition": "agent.income < 30000",
//!  "action": {"op": "multiply", "variable": "insurance_cost", "operand": "0.5"},
//!  "mode": "once"}
//! ```
//!
//! `continuous` policies re-apply every tick their condition holds, so a
//! continuous `multiply` compounds. Subsidy-style policies want `once`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::expr::{EvalError, Expression, Kind, SplitBindings, Value};
use crate::facet::{check_actions, is_identifier, parse_at, type_diag, Action, CompositeModelSpec, UpdateOp};
use crate::sim::{AgentId, AgentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    Once,
    Continuous,
}

impl PolicyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyMode::Once => "once",
            PolicyMode::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAction {
    pub op: UpdateOp,
    pub variable: String,
    pub operand: Expression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub name: String,
    pub target_agent_type: String,
    pub condition: Expression,
    pub action: PolicyAction,
    pub mode: PolicyMode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    name: String,
    target_agent_type: String,
    condition: RawExpr,
    action: RawAction,
    mode: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    op: String,
    variable: String,
    operand: RawExpr,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawExpr {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl RawExpr {
    fn parse(&self, path: &str, report: &mut ValidationReport) -> Option<Expression> {
        match self {
            RawExpr::Bool(b) => Some(Expression::from_node(crate::expr::Node::Bool(*b))),
            RawExpr::Number(v) => Some(Expression::constant(*v)),
            RawExpr::Text(s) => parse_at(s, path, report),
        }
    }
}

/// Parses a policy document. Checks are local; see [`validate_policy`] for
/// checks against a composite model.
pub fn parse_policy(document: &str) -> Result<Policy, ValidationReport> {
    let value: serde_json::Value = serde_json::from_str(document)
        .map_err(|e| ValidationReport::from(Diagnostic::bare(Code::MalformedJson, e.to_string())))?;
    policy_from_value(&value)
}

/// As [`parse_policy`], for an already-parsed JSON value (an inline policy).
pub fn policy_from_value(value: &serde_json::Value) -> Result<Policy, ValidationReport> {
    let raw: RawPolicy = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ValidationReport::from(Diagnostic::at(Code::SchemaViolation, path, e.into_inner().to_string()))
    })?;
    let mut report = ValidationReport::new();
    let subject = raw.name.clone();
    if !is_identifier(&raw.name.replace('-', "_")) {
        report.error(Diagnostic::at(Code::SchemaViolation, "name", format!("invalid policy name `{}`", raw.name)));
    }
    let op = UpdateOp::from_name(&raw.action.op);
    if op.is_none() {
        report.error(Diagnostic::at(
            Code::UnknownOp,
            format!("{subject}: action.op"),
            format!("unknown op `{}` (expected set, add or multiply)", raw.action.op),
        ));
    }
    let mode = match raw.mode.as_str() {
        "once" => Some(PolicyMode::Once),
        "continuous" => Some(PolicyMode::Continuous),
        other => {
            report.error(Diagnostic::at(
                Code::UnknownMode,
                format!("{subject}: mode"),
                format!("unknown mode `{other}` (expected once or continuous)"),
            ));
            None
        }
    };
    let condition = raw.condition.parse(&format!("{subject}: condition"), &mut report);
    let operand = raw.action.operand.parse(&format!("{subject}: action.operand"), &mut report);
    match (op, mode, condition, operand) {
        (Some(op), Some(mode), Some(condition), Some(operand)) if report.is_ok() => Ok(Policy {
            name: raw.name,
            target_agent_type: raw.target_agent_type,
            condition,
            action: PolicyAction { op, variable: raw.action.variable, operand },
            mode,
        }),
        _ => Err(report),
    }
}

impl Policy {
    /// Canonical JSON form; expressions in their normalized rendering.
    pub fn to_value(&self) -> serde_json::Value {
        json!({
            "name": self.name,
            "target_agent_type": self.target_agent_type,
            "condition": self.condition.to_string(),
            "action": {
                "op": self.action.op.as_str(),
                "variable": self.action.variable,
                "operand": self.action.operand.to_string(),
            },
            "mode": self.mode.as_str(),
        })
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: when {} on {}, {} {} by {} ({})",
            self.name,
            self.condition,
            self.target_agent_type,
            self.action.op.as_str(),
            self.action.variable,
            self.action.operand,
            self.mode.as_str()
        )
    }
}

/// Checks a policy against a composite: the target type and variable exist,
/// the condition is boolean and the operand fits the variable.
pub fn validate_policy(policy: &Policy, spec: &CompositeModelSpec) -> ValidationReport {
    let mut report = ValidationReport::new();
    let t = &policy.target_agent_type;
    if spec.agent_type(t).is_none() {
        report.error(Diagnostic::at(
            Code::UnknownAgentType,
            policy.name.clone(),
            format!("policy targets unknown agent type `{t}`"),
        ));
        return report;
    }
    if let Err(e) = policy.condition.check_kind(Kind::Boolean, &spec.kind_env(Some(t))) {
        report.error(type_diag(e, format!("{}: condition", policy.name)));
    }
    let action = Action::Update {
        op: policy.action.op,
        var: policy.action.variable.clone(),
        value: policy.action.operand.clone(),
    };
    let mut inner = ValidationReport::new();
    check_actions(spec, t, std::slice::from_ref(&action), "action", &mut inner);
    // single action: drop the `.actions[0]` suffix from subjects
    for mut d in inner.errors {
        d.subject = Some(format!("{}: action", policy.name));
        report.error(d);
    }
    report
}

/// Which agents each `once` policy has touched, and per-tick totals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyApplicationLog {
    applied: BTreeMap<String, BTreeSet<AgentId>>,
    per_tick: BTreeMap<u64, BTreeMap<String, usize>>,
}

impl PolicyApplicationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn has_applied(&self, policy: &str, agent: AgentId) -> bool {
        self.applied.get(policy).is_some_and(|s| s.contains(&agent))
    }

    pub fn record(&mut self, policy: &str, agent: AgentId, tick: u64) {
        self.applied.entry(policy.to_string()).or_default().insert(agent);
        *self.per_tick.entry(tick).or_default().entry(policy.to_string()).or_default() += 1;
    }

    /// Applications of `policy` at `tick`.
    pub fn count(&self, policy: &str, tick: u64) -> usize {
        self.per_tick.get(&tick).and_then(|m| m.get(policy)).copied().unwrap_or(0)
    }

    pub fn total(&self, policy: &str) -> usize {
        self.per_tick.values().filter_map(|m| m.get(policy)).sum()
    }

    pub fn applied_agents(&self, policy: &str) -> impl Iterator<Item = AgentId> + '_ {
        self.applied.get(policy).into_iter().flatten().copied()
    }
}

/// Evaluation failure while applying a policy.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("policy `{policy}` on agent {agent}: {source}")]
pub struct PolicyError {
    pub policy: String,
    pub agent: AgentId,
    #[source]
    pub source: EvalError,
}

/// Agents of the target type whose condition holds, minus those a `once`
/// policy has already touched, in ascending id.
pub fn applicable_agents(
    policy: &Policy,
    agents: &[AgentState],
    model_vars: &BTreeMap<String, Value>,
    log: &PolicyApplicationLog,
) -> Result<Vec<AgentId>, PolicyError> {
    let mut out = Vec::new();
    for a in agents.iter().filter(|a| a.agent_type == policy.target_agent_type) {
        if policy.mode == PolicyMode::Once && log.has_applied(&policy.name, a.id) {
            continue;
        }
        let env = SplitBindings { agent: &a.vars, model: model_vars };
        let hit = policy
            .condition
            .eval_bool(&env)
            .map_err(|source| PolicyError { policy: policy.name.clone(), agent: a.id, source })?;
        if hit {
            out.push(a.id);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// The change a policy makes to one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDelta {
    pub agent: AgentId,
    pub variable: String,
    pub before: Value,
    pub after: Value,
    /// The out-of-range value that was clamped to `after`, if any.
    pub clamped_from: Option<Value>,
}

/// Computes the policy's effect on `agent`; the operand sees the agent's
/// state before application. The caller writes `after` back.
pub fn apply_policy(
    policy: &Policy,
    agent: &AgentState,
    model_vars: &BTreeMap<String, Value>,
    spec: &CompositeModelSpec,
) -> Result<StateDelta, PolicyError> {
    let err = |source| PolicyError { policy: policy.name.clone(), agent: agent.id, source };
    let var = &policy.action.variable;
    let before = agent
        .vars
        .get(var)
        .cloned()
        .ok_or_else(|| err(EvalError::UnboundVariable(crate::expr::VarRef::agent(var.as_str()))))?;
    let env = SplitBindings { agent: &agent.vars, model: model_vars };
    let operand = policy.action.operand.eval(&env).map_err(err)?;
    let raw = policy.action.op.apply(&before, operand).map_err(err)?;
    let decl = spec.agent_type(&agent.agent_type).and_then(|t| t.vars.get(var)).map(|v| &v.decl);
    let (after, clamped_from) = match decl.and_then(|d| d.clamp(&raw)) {
        Some(c) => (c, Some(raw)),
        None => (raw, None),
    };
    Ok(StateDelta { agent: agent.id, variable: var.clone(), before, after, clamped_from })
}
