//! The run engine.
//!
//! Each tick runs these phases in order:
//!
//! 1. policies, in list order, each over its applicable agents in ascending id;
//! 2. a fresh uniform permutation of agent ids (the activation order);
//! 3. one flow traversal per agent, in activation order;
//! 4. metric collection, when `tick % interval == 0` or on the final tick;
//! 5. `tick += 1`.
//!
//! All randomness comes from one ChaCha8 stream seeded from the scenario
//! seed: optional initial jitter, then per tick the permutation followed by
//! traversal and match draws in activation order. Policies draw nothing.

mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{collect_metrics, format_cell, validate_metric, MetricRow, MetricSpec, MetricTable, Reducer};

use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::expr::{EvalError, Kind, SplitBindings, Value};
use crate::facet::{Action, CompositeModelSpec, VarDecl, TICK_VAR};
use crate::flow::{validate_flow, BehaviourFlow};
use crate::policy::{applicable_agents, apply_policy, validate_policy, Policy, PolicyApplicationLog, PolicyError};

pub type AgentId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub agent_type: String,
    pub vars: BTreeMap<String, Value>,
}

/// Seeded uniform noise added to a number variable at initialization,
/// then clamped to the variable's range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jitter {
    pub agent_type: String,
    pub variable: String,
    /// Noise is drawn from `[-spread, spread)`.
    pub spread: f64,
}

/// Everything a run needs besides the composite model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub iterations: u64,
    pub data_collection_interval: u64,
    pub seed: u64,
    pub populations: BTreeMap<String, u64>,
    pub model_var_overrides: BTreeMap<String, Value>,
    pub flows: BTreeMap<String, BehaviourFlow>,
    pub policies: Vec<Policy>,
    pub metrics: Vec<MetricSpec>,
    pub jitter: Vec<Jitter>,
}

impl RunSetup {
    /// A setup with no agents, flows, policies or metrics.
    pub fn new(iterations: u64, seed: u64) -> Self {
        Self {
            iterations,
            data_collection_interval: 1,
            seed,
            populations: BTreeMap::new(),
            model_var_overrides: BTreeMap::new(),
            flows: BTreeMap::new(),
            policies: Vec::new(),
            metrics: Vec::new(),
            jitter: Vec::new(),
        }
    }
}

/// Checks a setup against a composite, collecting every problem.
pub fn validate_setup(spec: &CompositeModelSpec, setup: &RunSetup) -> ValidationReport {
    let mut report = ValidationReport::new();
    let globals = |msg: &str| Diagnostic::at(Code::InvalidGlobals, "globals", msg);
    if setup.iterations < 1 {
        report.error(globals("iterations must be at least 1"));
    }
    if setup.data_collection_interval < 1 {
        report.error(globals("data_collection_interval must be at least 1"));
    }

    for name in spec.agent_types.keys() {
        if !setup.flows.contains_key(name) {
            report.error(Diagnostic::at(Code::MissingFlow, name.clone(), format!("agent type {name} has no flow binding")));
        }
        if !setup.populations.contains_key(name) {
            report.error(Diagnostic::at(
                Code::MissingPopulation,
                name.clone(),
                format!("agent type {name} has no population count"),
            ));
        }
    }
    for name in setup.populations.keys().chain(setup.flows.keys()) {
        if spec.agent_type(name).is_none() {
            report.error(Diagnostic::at(Code::UnknownAgentType, name.clone(), format!("unknown agent type `{name}`")));
        }
    }
    for (name, flow) in &setup.flows {
        if let Some(schema) = spec.schema(name) {
            report.merge_within(validate_flow(flow, &schema), &format!("flow {name}"));
        }
    }

    for (name, v) in &setup.model_var_overrides {
        let here = format!("model_var_overrides.{name}");
        match spec.model_vars.get(name) {
            _ if name == TICK_VAR => {
                report.error(Diagnostic::at(Code::SchemaViolation, here, "model.tick is maintained by the engine"))
            }
            None => report.error(Diagnostic::at(Code::UnknownVariable, here, format!("unknown model variable `{name}`"))),
            Some(s) if s.decl.kind != v.kind() => report.error(Diagnostic::at(
                Code::TypeMismatch,
                here,
                format!("model.{name} is {}, override is {}", s.decl.kind, v.kind()),
            )),
            Some(_) => {}
        }
    }

    let mut names = BTreeSet::new();
    for p in &setup.policies {
        if !names.insert(p.name.as_str()) {
            report.error(Diagnostic::at(Code::SchemaViolation, p.name.clone(), "duplicate policy name"));
        }
        report.merge_within(validate_policy(p, spec), "policy");
    }

    let mut names = BTreeSet::new();
    for m in &setup.metrics {
        if !names.insert(m.name.as_str()) {
            report.error(Diagnostic::at(Code::DuplicateMetric, m.name.clone(), "duplicate metric name"));
        }
        report.merge(validate_metric(m, spec));
    }

    for (i, j) in setup.jitter.iter().enumerate() {
        let here = format!("jitter[{i}]");
        let kind = spec.agent_type(&j.agent_type).map(|t| t.vars.get(&j.variable).map(|v| v.decl.kind));
        match kind {
            None => report.error(Diagnostic::at(Code::UnknownAgentType, here, format!("unknown agent type `{}`", j.agent_type))),
            Some(None) => report.error(Diagnostic::at(
                Code::UnknownVariable,
                here,
                format!("{} has no variable `{}`", j.agent_type, j.variable),
            )),
            Some(Some(k)) if k != Kind::Number => {
                report.error(Diagnostic::at(Code::TypeMismatch, here, format!("{}.{} is not a number", j.agent_type, j.variable)))
            }
            Some(Some(_)) if !(j.spread.is_finite() && j.spread >= 0.0) => {
                report.error(Diagnostic::at(Code::SchemaViolation, here, "spread must be finite and non-negative"))
            }
            Some(Some(_)) => {}
        }
    }
    report
}

/// A failure during a run, with where it happened.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct RunError {
    pub tick: u64,
    pub agent: Option<AgentId>,
    /// Node id, policy, metric or initializer.
    pub location: Option<String>,
    pub message: String,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tick {}", self.tick)?;
        if let Some(a) = self.agent {
            write!(f, ", agent {a}")?;
        }
        if let Some(l) = &self.location {
            write!(f, ", {l}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl RunError {
    fn eval(tick: u64, agent: Option<AgentId>, location: impl Into<String>, e: EvalError) -> Self {
        Self { tick, agent, location: Some(location.into()), message: e.to_string() }
    }

    fn policy(tick: u64, e: PolicyError) -> Self {
        Self { tick, agent: Some(e.agent), location: Some(format!("policy {}", e.policy)), message: e.source.to_string() }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid run setup:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Run warnings, each key reported once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Warnings {
    seen: BTreeSet<String>,
    lines: Vec<String>,
}

impl Warnings {
    pub fn warn(&mut self, key: String, line: impl FnOnce() -> String) {
        if !self.seen.contains(&key) {
            self.lines.push(line());
            self.seen.insert(key);
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

/// What happened in one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    pub policy_applications: usize,
    pub activation: Vec<AgentId>,
    /// Behaviours executed by each agent, in activation order.
    pub executed: Vec<(AgentId, Vec<String>)>,
    pub row: Option<Vec<Option<f64>>>,
}

/// Output of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub table: MetricTable,
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn metrics_csv(&self) -> String {
        self.table.to_csv()
    }

    pub fn warnings_log(&self) -> String {
        self.warnings.iter().map(|w| format!("{w}\n")).collect()
    }
}

/// Mutable run state. One owner drives it through [`ModelState::step`].
#[derive(Debug, Clone)]
pub struct ModelState {
    tick: u64,
    agents: Vec<AgentState>,
    model_vars: BTreeMap<String, Value>,
    rng: ChaCha8Rng,
    spec: Arc<CompositeModelSpec>,
    flows: BTreeMap<String, Arc<BehaviourFlow>>,
    policies: Arc<Vec<Policy>>,
    metrics: Vec<MetricSpec>,
    iterations: u64,
    interval: u64,
    seed: u64,
    log: PolicyApplicationLog,
    warnings: Warnings,
    table: MetricTable,
}

impl PartialEq for ModelState {
    /// Compares everything observable, including the rng position.
    fn eq(&self, other: &Self) -> bool {
        self.tick == other.tick
            && self.agents == other.agents
            && self.model_vars == other.model_vars
            && self.rng == other.rng
            && self.spec == other.spec
            && self.flows == other.flows
            && self.policies == other.policies
            && self.metrics == other.metrics
            && (self.iterations, self.interval, self.seed) == (other.iterations, other.interval, other.seed)
            && self.log == other.log
            && self.warnings == other.warnings
            && self.table == other.table
    }
}

fn clamp_note(decl: &VarDecl, raw: &Value, after: &Value) -> String {
    let (lo, hi) = decl.range.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    format!("{} = {raw} outside [{lo}, {hi}], clamped to {after}", decl.name)
}

/// Validates `setup`, creates the population and seeds the rng.
///
/// Agent types are instantiated in name order with consecutive ids; within
/// an agent, variables are initialized so that each initializer sees the
/// variables it reads.
pub fn initialize_run(spec: Arc<CompositeModelSpec>, setup: RunSetup) -> Result<ModelState, SimError> {
    let report = validate_setup(&spec, &setup);
    if !report.is_ok() {
        return Err(SimError::Invalid(report));
    }
    let mut warnings = Warnings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);

    let mut model_vars = BTreeMap::new();
    let no_agent = BTreeMap::new();
    for v in spec.model_init_order() {
        let name = &v.decl.name;
        let value = match setup.model_var_overrides.get(name) {
            Some(o) => o.clone(),
            None => v
                .decl
                .init
                .eval(&SplitBindings { agent: &no_agent, model: &model_vars })
                .map_err(|e| RunError::eval(0, None, format!("init model.{name}"), e))?,
        };
        let value = match v.decl.clamp(&value) {
            Some(c) => {
                warnings.warn(format!("init:model.{name}"), || format!("init: model.{}", clamp_note(&v.decl, &value, &c)));
                c
            }
            None => value,
        };
        model_vars.insert(name.clone(), value);
    }

    let mut agents = Vec::new();
    for (type_name, t) in &spec.agent_types {
        let order = t.init_order();
        for _ in 0..setup.populations.get(type_name).copied().unwrap_or(0) {
            let id = agents.len();
            let mut vars = BTreeMap::new();
            for v in &order {
                let name = &v.decl.name;
                let value = v
                    .decl
                    .init
                    .eval(&SplitBindings { agent: &vars, model: &model_vars })
                    .map_err(|e| RunError::eval(0, Some(id), format!("init {type_name}.{name}"), e))?;
                let value = match v.decl.clamp(&value) {
                    Some(c) => {
                        warnings.warn(format!("init:{type_name}.{name}"), || {
                            format!("init: {type_name}.{} (first at agent {id})", clamp_note(&v.decl, &value, &c))
                        });
                        c
                    }
                    None => value,
                };
                vars.insert(name.clone(), value);
            }
            agents.push(AgentState { id, agent_type: type_name.clone(), vars });
        }
    }

    for j in &setup.jitter {
        let decl = &spec.agent_types[&j.agent_type].vars[&j.variable].decl;
        for a in agents.iter_mut().filter(|a| a.agent_type == j.agent_type) {
            let u: f64 = rng.gen();
            let x = a.vars[&j.variable].as_number().unwrap_or_default() + j.spread * (2.0 * u - 1.0);
            let v = Value::Number(x);
            a.vars.insert(j.variable.clone(), decl.clamp(&v).unwrap_or(v));
        }
    }

    let names = setup.metrics.iter().map(|m| m.name.clone()).collect();
    Ok(ModelState {
        tick: 0,
        agents,
        model_vars,
        rng,
        flows: setup.flows.into_iter().map(|(k, f)| (k, Arc::new(f))).collect(),
        spec,
        policies: Arc::new(setup.policies),
        metrics: setup.metrics,
        iterations: setup.iterations,
        interval: setup.data_collection_interval,
        seed: setup.seed,
        log: PolicyApplicationLog::new(),
        warnings,
        table: MetricTable::new(names),
    })
}

impl ModelState {
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.iterations
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> &AgentState {
        &self.agents[id]
    }

    pub fn model_vars(&self) -> &BTreeMap<String, Value> {
        &self.model_vars
    }

    pub fn spec(&self) -> &CompositeModelSpec {
        &self.spec
    }

    pub fn application_log(&self) -> &PolicyApplicationLog {
        &self.log
    }

    pub fn warnings(&self) -> &[String] {
        self.warnings.lines()
    }

    pub fn table(&self) -> &MetricTable {
        &self.table
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<TickReport, RunError> {
        let tick = self.tick;
        if self.is_finished() {
            return Err(RunError {
                tick,
                agent: None,
                location: None,
                message: format!("run already finished after {} iterations", self.iterations),
            });
        }
        self.model_vars.insert(TICK_VAR.to_string(), Value::Number(tick as f64));

        let mut policy_applications = 0;
        let policies = Arc::clone(&self.policies);
        for p in policies.iter() {
            let ids = applicable_agents(p, &self.agents, &self.model_vars, &self.log)
                .map_err(|e| RunError::policy(tick, e))?;
            for id in ids {
                let d = apply_policy(p, &self.agents[id], &self.model_vars, &self.spec)
                    .map_err(|e| RunError::policy(tick, e))?;
                if let Some(raw) = &d.clamped_from {
                    let t = &self.agents[id].agent_type;
                    let decl = &self.spec.agent_types[t].vars[&d.variable].decl;
                    self.warnings.warn(format!("policy:{}:{t}.{}", p.name, d.variable), || {
                        format!("tick {tick}: policy {} set {t}.{} (first at agent {id})", p.name, clamp_note(decl, raw, &d.after))
                    });
                }
                self.agents[id].vars.insert(d.variable, d.after);
                self.log.record(&p.name, id, tick);
                policy_applications += 1;
            }
        }

        let mut activation: Vec<AgentId> = (0..self.agents.len()).collect();
        activation.shuffle(&mut self.rng);

        let mut executed = Vec::with_capacity(activation.len());
        for &id in &activation {
            executed.push((id, self.traverse(id)?));
        }

        let row = if tick % self.interval == 0 || tick + 1 == self.iterations {
            let values = collect_metrics(&self.metrics, &self.agents, &self.model_vars).map_err(|(m, e)| {
                RunError::eval(tick, None, format!("metric {m}"), e)
            })?;
            self.table.rows.push(MetricRow { tick, values: values.clone() });
            Some(values)
        } else {
            None
        };

        self.tick += 1;
        Ok(TickReport { tick, policy_applications, activation, executed, row })
    }

    /// Walks the agent's flow from its start node and returns the executed
    /// behaviours in order.
    ///
    /// A node with one child draws `u` in [0, 1) and executes the child iff
    /// `u` is below its trigger, then moves to it either way. A node with
    /// several children selects one with probability proportional to the
    /// triggers (one draw, cumulative sum in edge order) and executes it
    /// unconditionally; if every trigger is 0 the walk stops.
    pub fn traverse(&mut self, agent: AgentId) -> Result<Vec<String>, RunError> {
        let Some(flow) = self.flows.get(&self.agents[agent].agent_type).cloned() else {
            return Ok(Vec::new());
        };
        let mut executed = Vec::new();
        let Some(mut cursor) = flow.start() else {
            return Ok(executed);
        };
        loop {
            let next = match flow.children(cursor) {
                [] => break,
                &[only] => {
                    let p = self.trigger(&flow, only, agent)?;
                    let u: f64 = self.rng.gen();
                    (u < p).then_some(only).ok_or(only)
                }
                children => {
                    let weights =
                        children.iter().map(|&c| self.trigger(&flow, c, agent)).collect::<Result<Vec<_>, _>>()?;
                    let total: f64 = weights.iter().sum();
                    if total <= 0.0 {
                        break;
                    }
                    let x = self.rng.gen::<f64>() * total;
                    let mut cum = 0.0;
                    let mut pick = None;
                    for (&c, &w) in children.iter().zip(&weights) {
                        cum += w;
                        if x < cum {
                            pick = Some(c);
                            break;
                        }
                    }
                    // rounding can leave x at the very top of the range
                    let last_positive = || children.iter().zip(&weights).rev().find(|(_, &w)| w > 0.0).map(|(&c, _)| c);
                    Ok(pick.or_else(last_positive).expect("total > 0 implies a positive weight"))
                }
            };
            cursor = match next {
                Ok(run) => {
                    if let Some(b) = flow.node(run).behaviour.clone() {
                        self.execute_behaviour(agent, &b, &flow.node(run).id)?;
                        executed.push(b);
                    }
                    run
                }
                Err(skip) => skip,
            };
        }
        Ok(executed)
    }

    fn trigger(&mut self, flow: &BehaviourFlow, node: usize, agent: AgentId) -> Result<f64, RunError> {
        let n = flow.node(node);
        let env = SplitBindings { agent: &self.agents[agent].vars, model: &self.model_vars };
        let v = n
            .trigger
            .evaluate(&env)
            .map_err(|e| RunError::eval(self.tick, Some(agent), format!("node {}", n.id), e))?;
        if v.was_clamped() {
            let t = &self.agents[agent].agent_type;
            self.warnings.warn(format!("trigger:{t}:{}", n.id), || {
                format!(
                    "tick {}: trigger of {t} node {} evaluated to {} (first at agent {agent}); clamped to {}",
                    self.tick, n.id, v.raw, v.probability
                )
            });
        }
        Ok(v.probability)
    }

    /// Runs a behaviour's actions in order against progressively updated
    /// state. `location` labels errors (usually the node id).
    pub fn execute_behaviour(&mut self, agent: AgentId, behaviour: &str, location: &str) -> Result<(), RunError> {
        let spec = Arc::clone(&self.spec);
        let t = &self.agents[agent].agent_type;
        let def = spec.agent_type(t).and_then(|t| t.behaviours.get(behaviour)).ok_or_else(|| RunError {
            tick: self.tick,
            agent: Some(agent),
            location: Some(format!("node {location}")),
            message: format!("{t} has no behaviour `{behaviour}`"),
        })?;
        self.apply_actions(agent, &def.def.actions, &format!("node {location} ({behaviour})"))
    }

    fn apply_actions(&mut self, agent: AgentId, actions: &[Action], location: &str) -> Result<(), RunError> {
        let tick = self.tick;
        let err = |e: EvalError| RunError::eval(tick, Some(agent), location, e);
        for action in actions {
            match action {
                Action::Update { op, var, value } => {
                    let a = &self.agents[agent];
                    let operand = value.eval(&SplitBindings { agent: &a.vars, model: &self.model_vars }).map_err(err)?;
                    let current = a
                        .vars
                        .get(var)
                        .ok_or_else(|| err(EvalError::UnboundVariable(crate::expr::VarRef::agent(var.as_str()))))?;
                    let raw = op.apply(current, operand).map_err(err)?;
                    let decl = &self.spec.agent_types[&a.agent_type].vars[var].decl;
                    let new = match decl.clamp(&raw) {
                        Some(c) => {
                            let t = &a.agent_type;
                            self.warnings.warn(format!("action:{t}.{var}"), || {
                                format!("tick {tick}: {location} set {t}.{} (first at agent {agent})", clamp_note(decl, &raw, &c))
                            });
                            c
                        }
                        None => raw,
                    };
                    self.agents[agent].vars.insert(var.clone(), new);
                }
                Action::Match(m) => {
                    let mut eligible = Vec::new();
                    for cand in self.agents.iter().filter(|c| c.agent_type == m.target_type && c.id != agent) {
                        let env = SplitBindings { agent: &cand.vars, model: &self.model_vars };
                        if m.target_filter.eval_bool(&env).map_err(err)? {
                            eligible.push(cand.id);
                        }
                    }
                    if eligible.is_empty() {
                        continue;
                    }
                    let target = eligible[self.rng.gen_range(0..eligible.len() as u64) as usize];
                    self.apply_actions(agent, &m.self_actions, location)?;
                    self.apply_actions(target, &m.target_actions, location)?;
                }
            }
        }
        Ok(())
    }

    /// Steps to the end, reporting `(ticks done, total)` after each tick.
    pub fn run(&mut self, mut progress: impl FnMut(u64, u64)) -> Result<RunResult, RunError> {
        while !self.is_finished() {
            self.step()?;
            progress(self.tick, self.iterations);
        }
        Ok(self.result())
    }

    /// The result so far.
    pub fn result(&self) -> RunResult {
        RunResult { seed: self.seed, table: self.table.clone(), warnings: self.warnings.lines().to_vec() }
    }
}

/// Initializes and runs to completion.
pub fn run_to_end(spec: Arc<CompositeModelSpec>, setup: RunSetup) -> Result<RunResult, SimError> {
    let mut state = initialize_run(spec, setup)?;
    Ok(state.run(|_, _| {})?)
}
