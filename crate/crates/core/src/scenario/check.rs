//! Validation of single workspace artifacts, shared by the CLI and server.
//!
//! Flows and policies are checked against the workspace model: every facet
//! in the workspace composed together.

use std::collections::{BTreeMap, VecDeque};

use super::Workspace;
use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::facet::{compose, resolve_dependencies, CompositeModelSpec};
use crate::flow::{load_flow, validate_flow, BehaviourFlow};
use crate::policy::{parse_policy, validate_policy, Policy};

/// All workspace facets, dependency-ordered and composed.
pub fn workspace_model(ws: &Workspace) -> Result<CompositeModelSpec, ValidationReport> {
    let (all, report) = ws.load_all_facets();
    if !report.is_ok() {
        return Err(report);
    }
    let names: Vec<String> = all.keys().cloned().collect();
    let order = resolve_dependencies(&names, &all).map_err(|e| ValidationReport::from(e.to_diagnostic()))?;
    let manifests: Vec<_> = order.iter().map(|n| all[n].clone()).collect();
    compose(&CompositeModelSpec::base(), &manifests)
}

/// Checks one facet together with its transitive dependencies.
pub fn check_facet(ws: &Workspace, name: &str) -> ValidationReport {
    let mut report = ValidationReport::new();
    let mut loaded = BTreeMap::new();
    let mut queue = VecDeque::from([name.to_string()]);
    let mut selection = Vec::new();
    while let Some(n) = queue.pop_front() {
        if loaded.contains_key(&n) {
            continue;
        }
        match ws.load_facet(&n) {
            Ok((m, _)) => {
                queue.extend(m.depends_on.iter().cloned());
                selection.push(n.clone());
                loaded.insert(n, m);
            }
            // an absent dependency shows up as MISSING_DEPENDENCY below
            Err(r) if n != name && r.has_code(Code::UnknownFacet) => {}
            Err(r) => {
                report.merge(r);
                return report;
            }
        }
    }
    match resolve_dependencies(&selection, &loaded) {
        Ok(order) => {
            let manifests: Vec<_> = order.iter().map(|n| loaded[n].clone()).collect();
            if let Err(r) = compose(&CompositeModelSpec::base(), &manifests) {
                report.merge(r);
            }
        }
        Err(e) => report.error(e.to_diagnostic()),
    }
    report
}

/// Loads and validates a flow. The agent type is `bound_type` when given,
/// else the graph id.
pub fn check_flow(
    text: &str,
    model: &CompositeModelSpec,
    bound_type: Option<&str>,
) -> (Option<BehaviourFlow>, ValidationReport) {
    let flow = match load_flow(text) {
        Ok(f) => f,
        Err(r) => return (None, r),
    };
    let t = bound_type.unwrap_or(&flow.agent_type).to_string();
    let Some(schema) = model.schema(&t) else {
        let d = Diagnostic::at(Code::UnknownAgentType, t.clone(), format!("no facet defines agent type `{t}`"));
        return (Some(flow), d.into());
    };
    let report = validate_flow(&flow, &schema);
    (Some(flow), report)
}

/// Parses and validates a policy document.
pub fn check_policy(text: &str, model: &CompositeModelSpec) -> (Option<Policy>, ValidationReport) {
    match parse_policy(text) {
        Ok(p) => {
            let r = validate_policy(&p, model);
            (Some(p), r)
        }
        Err(r) => (None, r),
    }
}
