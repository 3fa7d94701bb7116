//! Scenario documents, run archives and run comparison.
//!
//! ```json
//! {"name": "subsidy",
//!  "facets": ["MigrantFacet", "HealthFacet"],
//!  "flow_bindings": {"Migrant": "flows/Migrant.graphml"},
//!  "policies": ["policies/insurance-subsidy.json"],
//!  "globals": {"iterations": 12, "data_collection_interval": 1, "seed": 42,
//!              "populations": {"Migrant": 200},
//!              "model_var_overrides": {}, "ui_params": {}},
//!  "metrics": [{"name": "mean_cost", "agent_type": "Migrant",
//!               "reducer": "mean", "variable": "insurance_cost"}],
//!  "jitter": [{"agent_type": "Migrant", "variable": "income", "spread": 15000}]}
//! ```
//!
//! Policies are file paths or inline policy objects. `ui_params` is passed
//! through untouched.

mod archive;
mod check;
mod compare;
mod workspace;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{persist_run, ArchiveMeta, RunArchive, ENGINE_VERSION};
pub use check::{check_facet, check_flow, check_policy, workspace_model};
pub use compare::{compare_runs, Comparison, ComparisonColumn, SummaryRow};
pub use workspace::{
    is_artifact_name, is_contained, Workspace, FACETS_DIR, FLOWS_DIR, POLICIES_DIR, RUNS_DIR, SCENARIOS_DIR,
};

use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::expr::Value;
use crate::facet::{compose, resolve_dependencies, CompositeModelSpec, FacetManifest};
use crate::flow::load_flow;
use crate::policy::{parse_policy, policy_from_value};
use crate::sim::{initialize_run, Jitter, MetricSpec, RunError, RunResult, RunSetup, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyRef {
    Path(String),
    Inline(serde_json::Value),
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Globals {
    pub iterations: u64,
    #[serde(default = "one")]
    pub data_collection_interval: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub populations: BTreeMap<String, u64>,
    #[serde(default)]
    pub model_var_overrides: BTreeMap<String, Value>,
    #[serde(default)]
    pub ui_params: serde_json::Map<String, serde_json::Value>,
}

/// A scenario as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub name: String,
    pub facets: Vec<String>,
    #[serde(default)]
    pub flow_bindings: BTreeMap<String, String>,
    #[serde(default)]
    pub policies: Vec<PolicyRef>,
    pub globals: Globals,
    #[serde(default)]
    pub metrics: Vec<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jitter: Vec<Jitter>,
}

impl ScenarioDocument {
    pub fn parse(document: &str) -> Result<Self, ValidationReport> {
        let mut de = serde_json::Deserializer::from_str(document);
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let code = if inner.is_syntax() || inner.is_eof() { Code::MalformedJson } else { Code::SchemaViolation };
            ValidationReport::from(Diagnostic::at(code, path, inner.to_string()))
        })
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

/// A scenario resolved against a workspace and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub document: ScenarioDocument,
    pub spec: Arc<CompositeModelSpec>,
    /// Facets in composition order.
    pub manifests: Vec<FacetManifest>,
    /// Facet name to manifest text as read.
    pub facet_sources: BTreeMap<String, String>,
    /// Agent type to GraphML text as read.
    pub flow_sources: BTreeMap<String, String>,
    pub setup: RunSetup,
    /// Non-fatal findings, such as unreachable flow nodes.
    pub warnings: Vec<Diagnostic>,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.document.name
    }

    /// Replaces the seed (in the document too, so archives record it).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.setup.seed = seed;
        self.document.globals.seed = seed;
        self
    }

    /// The document with every reference inlined or rewritten to archive
    /// layout: policies inline, flows at `flows/<AgentType>.graphml`.
    pub fn self_contained(&self) -> ScenarioDocument {
        let mut doc = self.document.clone();
        doc.flow_bindings = self.flow_sources.keys().map(|t| (t.clone(), format!("{FLOWS_DIR}/{t}.graphml"))).collect();
        doc.policies = self.setup.policies.iter().map(|p| PolicyRef::Inline(p.to_value())).collect();
        doc.metrics = self.setup.metrics.iter().map(MetricSpec::to_value).collect();
        doc
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Invalid(ValidationReport),
    #[error("run failed: {0}")]
    Run(RunError),
    #[error("{0}")]
    Io(String),
}

impl ScenarioError {
    /// Process exit status: 1 for invalid input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Invalid(_) => 1,
            ScenarioError::Run(_) | ScenarioError::Io(_) => 2,
        }
    }
}

impl From<SimError> for ScenarioError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(r) => ScenarioError::Invalid(r),
            SimError::Run(r) => ScenarioError::Run(r),
        }
    }
}

impl From<ValidationReport> for ScenarioError {
    fn from(r: ValidationReport) -> Self {
        ScenarioError::Invalid(r)
    }
}

/// Parses a scenario and resolves everything it refers to in `workspace`.
/// All problems found are reported together.
pub fn load_scenario(document: &str, workspace: &Workspace) -> Result<Scenario, ValidationReport> {
    let doc = ScenarioDocument::parse(document)?;
    let mut report = ValidationReport::new();
    if !is_artifact_name(&doc.name) {
        report.error(Diagnostic::at(Code::SchemaViolation, "name", format!("invalid scenario name `{}`", doc.name)));
    }

    let mut available = BTreeMap::new();
    let mut facet_sources = BTreeMap::new();
    for name in &doc.facets {
        match workspace.load_facet(name) {
            Ok((m, text)) => {
                available.insert(name.clone(), m);
                facet_sources.insert(name.clone(), text);
            }
            Err(r) => report.merge(r),
        }
    }
    let mut manifests = Vec::new();
    let spec = if report.is_ok() {
        match resolve_dependencies(&doc.facets, &available) {
            Ok(order) => {
                manifests = order.iter().map(|n| available[n].clone()).collect();
                match compose(&CompositeModelSpec::base(), &manifests) {
                    Ok(spec) => Some(spec),
                    Err(r) => {
                        report.merge(r);
                        None
                    }
                }
            }
            Err(e) => {
                report.error(e.to_diagnostic());
                None
            }
        }
    } else {
        None
    };

    let mut flows = BTreeMap::new();
    let mut flow_sources = BTreeMap::new();
    for (agent_type, rel) in &doc.flow_bindings {
        let text = match workspace.read_relative(rel) {
            Ok(t) => t,
            Err(d) => {
                report.error(d.within(&format!("flow_bindings.{agent_type}")));
                continue;
            }
        };
        match load_flow(&text) {
            Ok(f) => {
                flows.insert(agent_type.clone(), f);
                flow_sources.insert(agent_type.clone(), text);
            }
            Err(r) => report.merge_within(r, &format!("flow {agent_type} ({rel})")),
        }
    }

    let mut policies = Vec::new();
    for (i, p) in doc.policies.iter().enumerate() {
        let parsed = match p {
            PolicyRef::Path(rel) => match workspace.read_relative(rel) {
                Ok(text) => parse_policy(&text).map_err(|r| (r, rel.clone())),
                Err(d) => Err((d.into(), format!("policies[{i}]"))),
            },
            PolicyRef::Inline(v) => policy_from_value(v).map_err(|r| (r, format!("policies[{i}]"))),
        };
        match parsed {
            Ok(p) => policies.push(p),
            Err((r, at)) => report.merge_within(r, &at),
        }
    }

    let mut metrics = Vec::new();
    for (i, m) in doc.metrics.iter().enumerate() {
        match MetricSpec::from_value(m) {
            Ok(m) => metrics.push(m),
            Err(r) => report.merge_within(r, &format!("metrics[{i}]")),
        }
    }

    let g = &doc.globals;
    let setup = RunSetup {
        iterations: g.iterations,
        data_collection_interval: g.data_collection_interval,
        seed: g.seed,
        populations: g.populations.clone(),
        model_var_overrides: g.model_var_overrides.clone(),
        flows,
        policies,
        metrics,
        jitter: doc.jitter.clone(),
    };
    let Some(spec) = spec else {
        return Err(report);
    };
    let mut checked = crate::sim::validate_setup(&spec, &setup);
    // a bound flow that failed to load has been reported already
    checked.errors.retain(|d| {
        !(d.code == Code::MissingFlow && d.subject.as_ref().is_some_and(|t| doc.flow_bindings.contains_key(t)))
    });
    report.merge(checked);
    if !report.is_ok() {
        return Err(report);
    }
    Ok(Scenario {
        document: doc,
        spec: Arc::new(spec),
        manifests,
        facet_sources,
        flow_sources,
        setup,
        warnings: report.warnings,
    })
}

/// Runs a loaded scenario to completion.
pub fn run_scenario(scenario: &Scenario, progress: impl FnMut(u64, u64)) -> Result<RunResult, ScenarioError> {
    let mut state = initialize_run(Arc::clone(&scenario.spec), scenario.setup.clone())?;
    state.run(progress).map_err(ScenarioError::Run)
}

#[cfg(test)]
mod tests;
