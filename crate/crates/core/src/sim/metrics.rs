use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::AgentState;
use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::expr::{EvalError, Expression, Kind, SplitBindings, Value};
use crate::facet::{parse_at, type_diag, CompositeModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    Count,
    Sum,
    Mean,
    Min,
    Max,
    /// Reads a number model variable; takes no agent type.
    Value,
}

impl Reducer {
    pub fn as_str(self) -> &'static str {
        match self {
            Reducer::Count => "count",
            Reducer::Sum => "sum",
            Reducer::Mean => "mean",
            Reducer::Min => "min",
            Reducer::Max => "max",
            Reducer::Value => "value",
        }
    }
}

/// One column of the metric table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub name: String,
    pub agent_type: Option<String>,
    pub reducer: Reducer,
    pub variable: Option<String>,
    pub filter: Option<Expression>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetric {
    name: String,
    #[serde(default)]
    agent_type: Option<String>,
    reducer: Reducer,
    #[serde(default)]
    variable: Option<String>,
    #[serde(default)]
    filter: Option<String>,
}

impl MetricSpec {
    pub fn from_value(value: &serde_json::Value) -> Result<Self, ValidationReport> {
        let raw: RawMetric = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ValidationReport::from(Diagnostic::at(Code::SchemaViolation, path, e.into_inner().to_string()))
        })?;
        let mut report = ValidationReport::new();
        let filter = match &raw.filter {
            None => None,
            Some(src) => match parse_at(src, &format!("{}: filter", raw.name), &mut report) {
                Some(e) => Some(e),
                None => return Err(report),
            },
        };
        Ok(Self { name: raw.name, agent_type: raw.agent_type, reducer: raw.reducer, variable: raw.variable, filter })
    }

    pub fn to_value(&self) -> serde_json::Value {
        let mut v = json!({"name": self.name, "reducer": self.reducer.as_str()});
        if let Some(t) = &self.agent_type {
            v["agent_type"] = t.clone().into();
        }
        if let Some(var) = &self.variable {
            v["variable"] = var.clone().into();
        }
        if let Some(f) = &self.filter {
            v["filter"] = f.to_string().into();
        }
        v
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.name, self.reducer.as_str())?;
        match (&self.agent_type, &self.variable) {
            (Some(t), Some(v)) => write!(f, "({t}.{v})")?,
            (Some(t), None) => write!(f, "({t})")?,
            (None, Some(v)) => write!(f, "(model.{v})")?,
            (None, None) => {}
        }
        if let Some(flt) = &self.filter {
            write!(f, " where {flt}")?;
        }
        Ok(())
    }
}

/// Checks one metric against a composite.
pub fn validate_metric(m: &MetricSpec, spec: &CompositeModelSpec) -> ValidationReport {
    let mut report = ValidationReport::new();
    let here = format!("metric {}", m.name);
    let schema = |code, msg: String| Diagnostic::at(code, here.clone(), msg);
    if m.name.is_empty() || m.name == "tick" || m.name.contains(['[', ']', ',', '"', '\n']) {
        report.error(schema(Code::SchemaViolation, format!("invalid metric name `{}`", m.name)));
    }
    if m.reducer == Reducer::Value {
        if m.agent_type.is_some() || m.filter.is_some() {
            report.error(schema(Code::SchemaViolation, "`value` reads a model variable; drop agent_type and filter".into()));
        }
        match m.variable.as_deref().map(|v| spec.model_vars.get(v)) {
            None => report.error(schema(Code::SchemaViolation, "`value` needs a variable".into())),
            Some(None) => report.error(schema(
                Code::UnknownVariable,
                format!("unknown model variable `{}`", m.variable.as_deref().unwrap_or_default()),
            )),
            Some(Some(v)) if v.decl.kind != Kind::Number => {
                report.error(schema(Code::TypeMismatch, format!("model.{} is not a number", v.decl.name)))
            }
            Some(Some(_)) => {}
        }
        return report;
    }
    let Some(type_name) = &m.agent_type else {
        report.error(schema(Code::SchemaViolation, format!("`{}` needs an agent_type", m.reducer.as_str())));
        return report;
    };
    let Some(t) = spec.agent_type(type_name) else {
        report.error(schema(Code::UnknownAgentType, format!("unknown agent type `{type_name}`")));
        return report;
    };
    match (m.reducer, &m.variable) {
        (Reducer::Count, Some(_)) => {
            report.error(schema(Code::SchemaViolation, "`count` takes no variable; use a filter".into()))
        }
        (Reducer::Count, None) => {}
        (_, None) => report.error(schema(Code::SchemaViolation, format!("`{}` needs a variable", m.reducer.as_str()))),
        (_, Some(v)) => match t.vars.get(v) {
            None => report.error(schema(Code::UnknownVariable, format!("{type_name} has no variable `{v}`"))),
            Some(s) if s.decl.kind != Kind::Number => {
                report.error(schema(Code::TypeMismatch, format!("{type_name}.{v} is not a number")))
            }
            Some(_) => {}
        },
    }
    if let Some(f) = &m.filter {
        if let Err(e) = f.check_kind(Kind::Boolean, &spec.kind_env(Some(type_name))) {
            report.error(type_diag(e, format!("{here}: filter")));
        }
    }
    report
}

/// Evaluates every metric over the current population. Filters run before
/// reduction; `mean`, `min` and `max` of an empty set are `None`.
pub fn collect_metrics(
    specs: &[MetricSpec],
    agents: &[AgentState],
    model_vars: &BTreeMap<String, Value>,
) -> Result<Vec<Option<f64>>, (String, EvalError)> {
    specs
        .iter()
        .map(|m| reduce(m, agents, model_vars).map_err(|e| (m.name.clone(), e)))
        .collect()
}

fn reduce(m: &MetricSpec, agents: &[AgentState], model_vars: &BTreeMap<String, Value>) -> Result<Option<f64>, EvalError> {
    if m.reducer == Reducer::Value {
        let v = m.variable.as_deref().and_then(|v| model_vars.get(v)).and_then(Value::as_number);
        return Ok(v);
    }
    let mut count = 0usize;
    let mut xs = Vec::new();
    for a in agents.iter().filter(|a| Some(&a.agent_type) == m.agent_type.as_ref()) {
        if let Some(f) = &m.filter {
            if !f.eval_bool(&SplitBindings { agent: &a.vars, model: model_vars })? {
                continue;
            }
        }
        count += 1;
        if let Some(x) = m.variable.as_deref().and_then(|v| a.vars.get(v)).and_then(Value::as_number) {
            xs.push(x);
        }
    }
    let fold = |f: fn(f64, f64) -> f64| xs.iter().copied().reduce(f);
    Ok(match m.reducer {
        Reducer::Count => Some(count as f64),
        Reducer::Sum => Some(xs.iter().sum()),
        Reducer::Mean => (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
        Reducer::Min => fold(f64::min),
        Reducer::Max => fold(f64::max),
        Reducer::Value => unreachable!(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub tick: u64,
    pub values: Vec<Option<f64>>,
}

/// Collected rows, one per collection tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricTable {
    pub names: Vec<String>,
    pub rows: Vec<MetricRow>,
}

/// Shortest round-trip decimal; empty for a null cell.
pub fn format_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricTable {
    pub fn new(names: Vec<String>) -> Self {
        Self { names, rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }

    pub fn ticks(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.tick).collect()
    }

    /// `tick,<names...>` then one line per row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("tick").chain(self.names.iter().map(String::as_str));
        w.write_record(header).expect("in-memory write");
        for r in &self.rows {
            let cells = std::iter::once(r.tick.to_string()).chain(r.values.iter().map(|v| format_cell(*v)));
            w.write_record(cells).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of utf-8 input")
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        if header.get(0) != Some("tick") {
            return Err("first column must be `tick`".into());
        }
        let mut table = Self::new(header.iter().skip(1).map(str::to_string).collect());
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let tick = rec[0].parse().map_err(|_| format!("bad tick `{}`", &rec[0]))?;
            let values = rec
                .iter()
                .skip(1)
                .map(|c| if c.is_empty() { Ok(None) } else { c.parse().map(Some).map_err(|_| format!("bad cell `{c}`")) })
                .collect::<Result<_, _>>()?;
            table.rows.push(MetricRow { tick, values });
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(id: usize, job: bool, income: f64) -> AgentState {
        AgentState {
            id,
            agent_type: "Migrant".into(),
            vars: BTreeMap::from([("has_job".into(), Value::Bool(job)), ("income".into(), Value::Number(income))]),
        }
    }

    fn metric(json: &str) -> MetricSpec {
        MetricSpec::from_value(&serde_json::from_str(json).unwrap()).unwrap()
    }

    #[test]
    fn reductions() {
        let agents = [agent(0, true, 10.0), agent(1, false, 20.0), agent(2, true, 40.0)];
        let model = BTreeMap::from([("w".to_string(), Value::Number(2.5))]);
        let specs = [
            metric(r#"{"name":"employed","agent_type":"Migrant","reducer":"count","filter":"agent.has_job == true"}"#),
            metric(r#"{"name":"s","agent_type":"Migrant","reducer":"sum","variable":"income"}"#),
            metric(r#"{"name":"m","agent_type":"Migrant","reducer":"mean","variable":"income","filter":"agent.has_job"}"#),
            metric(r#"{"name":"lo","agent_type":"Migrant","reducer":"min","variable":"income"}"#),
            metric(r#"{"name":"hi","agent_type":"Migrant","reducer":"max","variable":"income"}"#),
            metric(r#"{"name":"w","reducer":"value","variable":"w"}"#),
        ];
        let row = collect_metrics(&specs, &agents, &model).unwrap();
        assert_eq!(row, vec![Some(2.0), Some(70.0), Some(25.0), Some(10.0), Some(40.0), Some(2.5)]);

        let empty = collect_metrics(&specs, &[], &model).unwrap();
        assert_eq!(empty, vec![Some(0.0), Some(0.0), None, None, None, Some(2.5)]);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = MetricTable::new(vec!["a".into(), "b".into()]);
        t.rows.push(MetricRow { tick: 0, values: vec![Some(0.1), None] });
        t.rows.push(MetricRow { tick: 5, values: vec![Some(1e21), Some(-3.0)] });
        let text = t.to_csv();
        assert_eq!(text, "tick,a,b\n0,0.1,\n5,1000000000000000000000,-3\n");
        assert_eq!(MetricTable::from_csv(&text).unwrap(), t);
        assert_eq!(t.column("b").unwrap(), vec![None, Some(-3.0)]);
    }

    #[test]
    fn metric_json_round_trip() {
        let m = metric(r#"{"name":"m","agent_type":"Migrant","reducer":"mean","variable":"income","filter":"agent.has_job"}"#);
        assert_eq!(MetricSpec::from_value(&m.to_value()).unwrap(), m);
        let bad = MetricSpec::from_value(&serde_json::json!({"name":"x","reducer":"median"})).unwrap_err();
        assert_eq!(bad.errors[0].code, Code::SchemaViolation);
    }
}
