use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::manifest::FacetManifest;
use crate::diag::{Code, Diagnostic};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("unknown facet(s): {}", .0.join(", "))]
    UnknownFacet(Vec<String>),
    #[error("missing dependencies: {}", describe_missing(.0))]
    MissingDependency(BTreeMap<String, Vec<String>>),
    #[error("cyclic dependencies among: {}", .0.join(", "))]
    CyclicDependency(Vec<String>),
}

fn describe_missing(m: &BTreeMap<String, Vec<String>>) -> String {
    m.iter()
        .map(|(facet, deps)| format!("{facet} requires {}", deps.join(" and ")))
        .collect::<Vec<_>>()
        .join("; ")
}

impl ResolveError {
    pub fn code(&self) -> Code {
        match self {
            ResolveError::UnknownFacet(_) => Code::UnknownFacet,
            ResolveError::MissingDependency(_) => Code::MissingDependency,
            ResolveError::CyclicDependency(_) => Code::CyclicDependency,
        }
    }

    /// Every facet name the user must add to the selection, deduplicated.
    pub fn missing_names(&self) -> BTreeSet<String> {
        match self {
            ResolveError::MissingDependency(m) => m.values().flatten().cloned().collect(),
            _ => BTreeSet::new(),
        }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        Diagnostic::at(self.code(), "facets", self.to_string())
    }
}

/// Orders the selected facets so every facet follows its dependencies.
///
/// Among facets whose dependencies are satisfied, the one listed first in
/// `selected` is emitted first. Dependencies must themselves be selected.
pub fn resolve_dependencies(
    selected: &[String],
    available: &BTreeMap<String, FacetManifest>,
) -> Result<Vec<String>, ResolveError> {
    let unknown: Vec<String> = selected.iter().filter(|s| !available.contains_key(*s)).cloned().collect();
    if !unknown.is_empty() {
        return Err(ResolveError::UnknownFacet(unknown));
    }

    let mut pending: Vec<&String> = Vec::new();
    for s in selected {
        if !pending.contains(&s) {
            pending.push(s);
        }
    }
    let chosen: BTreeSet<&String> = pending.iter().copied().collect();

    let mut missing: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in &pending {
        for dep in &available[*s].depends_on {
            if !chosen.contains(dep) {
                missing.entry((*s).clone()).or_default().push(dep.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(ResolveError::MissingDependency(missing));
    }

    let mut done: BTreeSet<&String> = BTreeSet::new();
    let mut order = Vec::with_capacity(pending.len());
    while !pending.is_empty() {
        let ready = pending
            .iter()
            .position(|f| available[*f].depends_on.iter().all(|d| done.contains(d)));
        match ready {
            Some(i) => {
                let f = pending.remove(i);
                done.insert(f);
                order.push(f.clone());
            }
            None => {
                return Err(ResolveError::CyclicDependency(
                    pending.iter().map(|s| (*s).clone()).collect(),
                ))
            }
        }
    }
    Ok(order)
}
