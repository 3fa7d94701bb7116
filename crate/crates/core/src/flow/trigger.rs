use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::expr::{Bindings, EvalError, Expression};
use crate::facet::parse_at;

/// One rule: when every criterion holds, the trigger takes `value`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerRule {
    pub when: Vec<Expression>,
    pub value: Expression,
}

/// Ordered rules plus a fallback; evaluates to a probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub rules: Vec<TriggerRule>,
    pub default: Expression,
}

impl Default for TriggerSpec {
    /// The constant trigger 1: always execute.
    fn default() -> Self {
        Self::constant(1.0)
    }
}

/// Result of evaluating a trigger. `raw` is the value before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerValue {
    pub probability: f64,
    pub raw: f64,
}

impl TriggerValue {
    pub fn was_clamped(&self) -> bool {
        self.probability != self.raw
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("trigger of node `{node}`: {source}")]
pub struct TriggerError {
    pub node: String,
    #[source]
    pub source: EvalError,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrigger {
    #[serde(default)]
    rules: Vec<RawRule>,
    default: RawExpr,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    #[serde(default)]
    when: Vec<String>,
    value: RawExpr,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawExpr {
    Number(f64),
    Text(String),
}

impl TriggerSpec {
    pub fn constant(v: f64) -> Self {
        Self { rules: Vec::new(), default: Expression::constant(v) }
    }

    /// Parses the trigger JSON document; `subject` locates errors (a node id).
    pub fn from_json(json: &str, subject: &str) -> Result<Self, ValidationReport> {
        let raw: RawTrigger = serde_json::from_str(json).map_err(|e| {
            ValidationReport::from(Diagnostic::at(Code::TriggerJson, subject, format!("trigger JSON: {e}")))
        })?;
        let mut report = ValidationReport::new();
        let expr = |r: &RawExpr, path: String, report: &mut ValidationReport| match r {
            RawExpr::Number(v) => Some(Expression::constant(*v)),
            RawExpr::Text(s) => parse_at(s, &path, report),
        };
        let mut rules = Vec::new();
        for (i, rule) in raw.rules.iter().enumerate() {
            let when: Vec<Option<Expression>> = rule
                .when
                .iter()
                .enumerate()
                .map(|(j, c)| parse_at(c, &format!("{subject}: rules[{i}].when[{j}]"), &mut report))
                .collect();
            let value = expr(&rule.value, format!("{subject}: rules[{i}].value"), &mut report);
            if let (Some(value), Some(when)) = (value, when.into_iter().collect::<Option<Vec<_>>>()) {
                rules.push(TriggerRule { when, value });
            }
        }
        let default = expr(&raw.default, format!("{subject}: default"), &mut report);
        match default {
            Some(default) if report.is_ok() => Ok(Self { rules, default }),
            _ => Err(report),
        }
    }

    /// Canonical JSON: expressions in their normalized rendering.
    pub fn to_json(&self) -> String {
        let raw = RawTrigger {
            rules: self
                .rules
                .iter()
                .map(|r| RawRule {
                    when: r.when.iter().map(|c| c.to_string()).collect(),
                    value: RawExpr::Text(r.value.to_string()),
                })
                .collect(),
            default: RawExpr::Text(self.default.to_string()),
        };
        serde_json::to_string(&raw).expect("trigger serializes")
    }

    /// Every expression in the spec, criteria first, with a location label.
    pub fn expressions(&self) -> impl Iterator<Item = (String, &Expression, bool)> {
        self.rules
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.when
                    .iter()
                    .enumerate()
                    .map(move |(j, c)| (format!("rules[{i}].when[{j}]"), c, true))
                    .chain(std::iter::once((format!("rules[{i}].value"), &r.value, false)))
            })
            .chain(std::iter::once(("default".to_string(), &self.default, false)))
    }

    /// Scans rules in order; the first rule whose criteria all hold yields
    /// its value, otherwise the default. The result is clamped to [0, 1].
    pub fn evaluate(&self, ctx: &dyn Bindings) -> Result<TriggerValue, EvalError> {
        let mut chosen = &self.default;
        'rules: for rule in &self.rules {
            for c in &rule.when {
                if !c.eval_bool(ctx)? {
                    continue 'rules;
                }
            }
            chosen = &rule.value;
            break;
        }
        let raw = chosen.eval_number(ctx)?;
        Ok(TriggerValue { probability: raw.clamp(0.0, 1.0), raw })
    }
}

/// Evaluates a trigger to a probability in [0, 1].
pub fn evaluate_trigger(spec: &TriggerSpec, ctx: &dyn Bindings) -> Result<f64, EvalError> {
    spec.evaluate(ctx).map(|v| v.probability)
}
