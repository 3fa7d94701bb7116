use std::collections::{BTreeMap, BTreeSet};

use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::expr::{Expression, Kind, Scope, TypeError, VarRef};

use super::manifest::{Action, BehaviourDef, FacetManifest, UpdateOp, VarDecl};

/// Provenance label for items the base model provides.
pub const BASE_FACET: &str = "base";

/// Built-in model variable holding the current tick.
pub const TICK_VAR: &str = "tick";

#[derive(Debug, Clone, PartialEq)]
pub struct VarSpec {
    pub decl: VarDecl,
    pub facet: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviourSpec {
    pub def: BehaviourDef,
    pub facet: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTypeSpec {
    pub name: String,
    /// Facet that created the type.
    pub facet: String,
    pub vars: BTreeMap<String, VarSpec>,
    pub behaviours: BTreeMap<String, BehaviourSpec>,
}

impl AgentTypeSpec {
    /// Variables in initialization order: each variable after the ones its
    /// initializer reads, ties broken by name.
    pub fn init_order(&self) -> Vec<&VarSpec> {
        init_order(&self.vars, Scope::Agent)
    }
}

/// The merged model: agent types, model variables and where each came from.
///
/// Maps are keyed by name, so the result does not depend on the order in
/// which independent facets were applied.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeModelSpec {
    pub agent_types: BTreeMap<String, AgentTypeSpec>,
    pub model_vars: BTreeMap<String, VarSpec>,
    pub facets: BTreeSet<String>,
}

/// What a flow, policy or metric may refer to on one agent type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTypeSchema {
    pub name: String,
    pub behaviours: Vec<String>,
    pub vars: BTreeMap<String, Kind>,
    pub model_vars: BTreeMap<String, Kind>,
}

impl AgentTypeSchema {
    pub fn kind_of(&self, v: &VarRef) -> Option<Kind> {
        match v.scope {
            Scope::Agent => self.vars.get(&v.name).copied(),
            Scope::Model => self.model_vars.get(&v.name).copied(),
        }
    }

    pub fn has_behaviour(&self, name: &str) -> bool {
        self.behaviours.iter().any(|b| b == name)
    }
}

fn init_order(vars: &BTreeMap<String, VarSpec>, scope: Scope) -> Vec<&VarSpec> {
    let deps: BTreeMap<&str, BTreeSet<&str>> = vars
        .iter()
        .map(|(name, spec)| {
            let reads = spec
                .decl
                .init
                .free_variables()
                .into_iter()
                .filter(|v| v.scope == scope && v.name != *name)
                .filter_map(|v| vars.get_key_value(&v.name).map(|(k, _)| k.as_str()))
                .collect();
            (name.as_str(), reads)
        })
        .collect();
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::with_capacity(vars.len());
    while out.len() < vars.len() {
        let before = out.len();
        for (name, reads) in &deps {
            if !done.contains(name) && reads.iter().all(|r| done.contains(r)) {
                done.insert(name);
                out.push(&vars[*name]);
                break;
            }
        }
        if out.len() == before {
            // cyclic initializers are rejected at composition; fall back to name order
            for (name, spec) in vars {
                if done.insert(name.as_str()) {
                    out.push(spec);
                }
            }
        }
    }
    out
}

impl CompositeModelSpec {
    /// The base model: no agent types, only the built-in clock.
    pub fn base() -> Self {
        let mut model_vars = BTreeMap::new();
        model_vars.insert(
            TICK_VAR.to_string(),
            VarSpec {
                decl: VarDecl {
                    name: TICK_VAR.to_string(),
                    kind: Kind::Number,
                    init: Expression::constant(0.0),
                    range: None,
                },
                facet: BASE_FACET.to_string(),
            },
        );
        Self { agent_types: BTreeMap::new(), model_vars, facets: BTreeSet::new() }
    }

    pub fn agent_type(&self, name: &str) -> Option<&AgentTypeSpec> {
        self.agent_types.get(name)
    }

    pub fn model_init_order(&self) -> Vec<&VarSpec> {
        init_order(&self.model_vars, Scope::Model)
    }

    pub fn model_var_kinds(&self) -> BTreeMap<String, Kind> {
        self.model_vars.iter().map(|(k, v)| (k.clone(), v.decl.kind)).collect()
    }

    pub fn schema(&self, agent_type: &str) -> Option<AgentTypeSchema> {
        let t = self.agent_types.get(agent_type)?;
        Some(AgentTypeSchema {
            name: t.name.clone(),
            behaviours: t.behaviours.keys().cloned().collect(),
            vars: t.vars.iter().map(|(k, v)| (k.clone(), v.decl.kind)).collect(),
            model_vars: self.model_var_kinds(),
        })
    }

    /// Kind lookup for expressions evaluated with `agent.` bound to
    /// an agent of `agent_type` (or no agent at all).
    pub fn kind_env(&self, agent_type: Option<&str>) -> impl Fn(&VarRef) -> Option<Kind> + '_ {
        let t = agent_type.and_then(|n| self.agent_types.get(n));
        move |v: &VarRef| match v.scope {
            Scope::Agent => t.and_then(|t| t.vars.get(&v.name)).map(|s| s.decl.kind),
            Scope::Model => self.model_vars.get(&v.name).map(|s| s.decl.kind),
        }
    }

    /// Facet that contributed each item, keyed `type:T`, `var:T.v`,
    /// `behaviour:T.b` or `model_var:v`.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.model_vars {
            out.insert(format!("model_var:{name}"), v.facet.clone());
        }
        for (tname, t) in &self.agent_types {
            out.insert(format!("type:{tname}"), t.facet.clone());
            for (v, s) in &t.vars {
                out.insert(format!("var:{tname}.{v}"), s.facet.clone());
            }
            for (b, s) in &t.behaviours {
                out.insert(format!("behaviour:{tname}.{b}"), s.facet.clone());
            }
        }
        out
    }
}

fn closure(facets: &[FacetManifest]) -> BTreeMap<&str, BTreeSet<&str>> {
    let by_name: BTreeMap<&str, &FacetManifest> = facets.iter().map(|f| (f.name.as_str(), f)).collect();
    let mut out = BTreeMap::new();
    for f in facets {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut stack: Vec<&str> = f.depends_on.iter().map(String::as_str).collect();
        while let Some(d) = stack.pop() {
            if seen.insert(d) {
                if let Some(m) = by_name.get(d) {
                    stack.extend(m.depends_on.iter().map(String::as_str));
                }
            }
        }
        out.insert(f.name.as_str(), seen);
    }
    out
}

/// Applies facet deltas, in order, to `base`.
///
/// Two facets creating the same type, or declaring the same variable or
/// behaviour on one type, is an error naming both facets.
pub fn compose(base: &CompositeModelSpec, facets: &[FacetManifest]) -> Result<CompositeModelSpec, ValidationReport> {
    let mut spec = base.clone();
    let mut report = ValidationReport::new();
    let deps = closure(facets);
    let mut earlier: BTreeSet<String> = base.facets.clone();
    earlier.insert(BASE_FACET.to_string());

    // an initializer may read items from the base, from facets it depends
    // on, or declared before it in its own facet
    let visible = |owner: &str, facet: &str| -> bool {
        facet == owner || earlier.contains(facet) || deps.get(owner).is_some_and(|d| d.contains(facet))
    };

    for f in facets {
        let fname = f.name.as_str();
        if spec.facets.contains(fname) {
            report.error(Diagnostic::at(Code::DuplicateType, fname, format!("facet `{fname}` applied twice")));
            continue;
        }

        for (i, decl) in f.model_vars.iter().enumerate() {
            let path = format!("{fname}: model_vars[{i}]");
            if let Some(prev) = spec.model_vars.get(&decl.name) {
                report.error(Diagnostic::at(
                    Code::DuplicateModelVar,
                    format!("model.{}", decl.name),
                    format!("model variable `{}` declared by both {} and {fname}", decl.name, prev.facet),
                ));
                continue;
            }
            for r in decl.init.free_variables() {
                match (r.scope, spec.model_vars.get(&r.name)) {
                    (Scope::Agent, _) => report.error(Diagnostic::at(
                        Code::InitOrder,
                        path.clone(),
                        format!("model initializer reads agent variable `{r}`"),
                    )),
                    (Scope::Model, None) => report.error(Diagnostic::at(
                        Code::UnboundVariable,
                        path.clone(),
                        format!("initializer reads `{r}`, which is not declared before it"),
                    )),
                    (Scope::Model, Some(s)) if !visible(fname, &s.facet) => report.error(Diagnostic::at(
                        Code::InitOrder,
                        path.clone(),
                        format!("initializer reads `{r}` from {}, which {fname} does not depend on", s.facet),
                    )),
                    _ => {}
                }
            }
            spec.model_vars
                .insert(decl.name.clone(), VarSpec { decl: decl.clone(), facet: fname.to_string() });
        }

        for (ti, delta) in f.agent_types.iter().enumerate() {
            let tpath = format!("{fname}: agent_types[{ti}]");
            match (delta.creates_type, spec.agent_types.get(&delta.name)) {
                (true, Some(prev)) => {
                    report.error(Diagnostic::at(
                        Code::DuplicateType,
                        delta.name.clone(),
                        format!("agent type `{}` created by both {} and {fname}", delta.name, prev.facet),
                    ));
                    continue;
                }
                (false, None) => {
                    report.error(Diagnostic::at(
                        Code::ExtendsUnknownType,
                        delta.name.clone(),
                        format!("{fname} extends agent type `{}`, which no earlier facet creates", delta.name),
                    ));
                    continue;
                }
                (true, None) => {
                    spec.agent_types.insert(
                        delta.name.clone(),
                        AgentTypeSpec {
                            name: delta.name.clone(),
                            facet: fname.to_string(),
                            vars: BTreeMap::new(),
                            behaviours: BTreeMap::new(),
                        },
                    );
                }
                (false, Some(_)) => {}
            }
            let t = spec.agent_types.get_mut(&delta.name).expect("type inserted above");

            for (vi, decl) in delta.state_vars.iter().enumerate() {
                let vpath = format!("{tpath}.state_vars[{vi}]");
                if let Some(prev) = t.vars.get(&decl.name) {
                    report.error(Diagnostic::at(
                        Code::DuplicateVar,
                        format!("{}.{}", delta.name, decl.name),
                        format!(
                            "variable `{}` on {} declared by both {} and {fname}",
                            decl.name, delta.name, prev.facet
                        ),
                    ));
                    continue;
                }
                for r in decl.init.free_variables() {
                    if r.scope != Scope::Agent {
                        continue;
                    }
                    match t.vars.get(&r.name) {
                        None => report.error(Diagnostic::at(
                            Code::InitOrder,
                            vpath.clone(),
                            format!("initializer reads `{r}`, which is not declared before it"),
                        )),
                        Some(s) if !visible(fname, &s.facet) => report.error(Diagnostic::at(
                            Code::InitOrder,
                            vpath.clone(),
                            format!("initializer reads `{r}` from {}, which {fname} does not depend on", s.facet),
                        )),
                        _ => {}
                    }
                }
                t.vars.insert(decl.name.clone(), VarSpec { decl: decl.clone(), facet: fname.to_string() });
            }

            for def in &delta.behaviours {
                if let Some(prev) = t.behaviours.get(&def.name) {
                    report.error(Diagnostic::at(
                        Code::DuplicateBehaviour,
                        format!("{}.{}", delta.name, def.name),
                        format!(
                            "behaviour `{}` on {} declared by both {} and {fname}",
                            def.name, delta.name, prev.facet
                        ),
                    ));
                    continue;
                }
                t.behaviours
                    .insert(def.name.clone(), BehaviourSpec { def: def.clone(), facet: fname.to_string() });
            }
        }
        spec.facets.insert(fname.to_string());
    }

    if report.is_ok() {
        check_semantics(&spec, &mut report);
    }
    report.into_result().map(|_| spec)
}

pub(crate) fn type_diag(e: TypeError, subject: String) -> Diagnostic {
    match e {
        TypeError::Unbound(v) => {
            Diagnostic::at(Code::UnboundVariable, subject, format!("unbound variable `{v}`"))
        }
        TypeError::Mismatch(m) => Diagnostic::at(Code::TypeMismatch, subject, m),
    }
}

/// Initializer kinds plus behaviour writes and operands.
fn check_semantics(spec: &CompositeModelSpec, report: &mut ValidationReport) {
    for (name, v) in &spec.model_vars {
        if let Err(e) = v.decl.init.check_kind(v.decl.kind, &spec.kind_env(None)) {
            report.error(type_diag(e, format!("model.{name}")));
        }
    }
    for (tname, t) in &spec.agent_types {
        let env = spec.kind_env(Some(tname));
        for (vname, v) in &t.vars {
            if let Err(e) = v.decl.init.check_kind(v.decl.kind, &env) {
                report.error(type_diag(e, format!("{tname}.{vname}")));
            }
        }
        for (bname, b) in &t.behaviours {
            check_actions(spec, tname, &b.def.actions, &format!("{tname}.{bname}"), report);
        }
    }
}

/// Checks actions that write to, and read `agent.` as, an agent of `owner`.
pub(crate) fn check_actions(
    spec: &CompositeModelSpec,
    owner: &str,
    actions: &[Action],
    subject: &str,
    report: &mut ValidationReport,
) {
    let Some(t) = spec.agent_type(owner) else {
        report.error(Diagnostic::at(Code::UnknownAgentType, subject, format!("unknown agent type `{owner}`")));
        return;
    };
    let env = spec.kind_env(Some(owner));
    for (i, a) in actions.iter().enumerate() {
        let here = format!("{subject}.actions[{i}]");
        match a {
            Action::Update { op, var, value } => {
                let Some(target) = t.vars.get(var) else {
                    report.error(Diagnostic::at(
                        Code::UnknownVariable,
                        here,
                        format!("`{}` writes `{var}`, which {owner} does not declare", op.as_str()),
                    ));
                    continue;
                };
                let want = match op {
                    UpdateOp::Set => target.decl.kind,
                    UpdateOp::Add | UpdateOp::Multiply => {
                        if target.decl.kind != Kind::Number {
                            report.error(Diagnostic::at(
                                Code::TypeMismatch,
                                here.clone(),
                                format!("`{}` on {} variable `{var}`", op.as_str(), target.decl.kind),
                            ));
                            continue;
                        }
                        Kind::Number
                    }
                };
                if let Err(e) = value.check_kind(want, &env) {
                    report.error(type_diag(e, here));
                }
            }
            Action::Match(m) => {
                if spec.agent_type(&m.target_type).is_none() {
                    report.error(Diagnostic::at(
                        Code::UnknownAgentType,
                        here,
                        format!("match targets unknown agent type `{}`", m.target_type),
                    ));
                    continue;
                }
                let target_env = spec.kind_env(Some(&m.target_type));
                if let Err(e) = m.target_filter.check_kind(Kind::Boolean, &target_env) {
                    report.error(type_diag(e, format!("{here}.target_filter")));
                }
                check_actions(spec, owner, &m.self_actions, &format!("{here}.self"), report);
                check_actions(spec, &m.target_type, &m.target_actions, &format!("{here}.target"), report);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facet::parse_manifest;

    fn m(json: &str) -> FacetManifest {
        parse_manifest(json).unwrap()
    }

    fn migrant() -> FacetManifest {
        m(r#"{"name": "MigrantFacet", "agent_types": [{"name": "Migrant", "creates_type": true,
            "state_vars": [{"name": "income", "kind": "number", "init": 25000},
                           {"name": "has_job", "kind": "boolean", "init": false}],
            "behaviours": [{"name": "apply-for-job"}]}]}"#)
    }

    #[test]
    fn identity_composition() {
        let base = CompositeModelSpec::base();
        assert_eq!(compose(&base, &[]).unwrap(), base);
    }

    #[test]
    fn duplicate_var_names_both_facets() {
        let other = m(r#"{"name": "IncomeFacet", "depends_on": ["MigrantFacet"], "agent_types": [{"name": "Migrant",
            "state_vars": [{"name": "income", "kind": "number", "init": 0}]}]}"#);
        let err = compose(&CompositeModelSpec::base(), &[migrant(), other]).unwrap_err();
        assert_eq!(err.errors[0].code, Code::DuplicateVar);
        assert!(err.errors[0].message.contains("MigrantFacet"));
        assert!(err.errors[0].message.contains("IncomeFacet"));
    }

    #[test]
    fn conflicts_and_unknown_extension() {
        let again = m(r#"{"name": "Again", "agent_types": [{"name": "Migrant", "creates_type": true}]}"#);
        let err = compose(&CompositeModelSpec::base(), &[migrant(), again]).unwrap_err();
        assert_eq!(err.errors[0].code, Code::DuplicateType);
        assert!(err.errors[0].message.contains("MigrantFacet") && err.errors[0].message.contains("Again"));

        let ext = m(r#"{"name": "Ext", "agent_types": [{"name": "Ghost", "state_vars": []}]}"#);
        let err = compose(&CompositeModelSpec::base(), &[ext]).unwrap_err();
        assert_eq!(err.errors[0].code, Code::ExtendsUnknownType);

        let beh = m(r#"{"name": "Beh", "agent_types": [{"name": "Migrant", "behaviours": [{"name": "apply-for-job"}]}]}"#);
        let err = compose(&CompositeModelSpec::base(), &[migrant(), beh]).unwrap_err();
        assert_eq!(err.errors[0].code, Code::DuplicateBehaviour);

        let tick = m(r#"{"name": "Clock", "model_vars": [{"name": "tick", "kind": "number", "init": 0}]}"#);
        let err = compose(&CompositeModelSpec::base(), &[tick]).unwrap_err();
        assert_eq!(err.errors[0].code, Code::DuplicateModelVar);
    }

    #[test]
    fn behaviour_semantics_checked() {
        let bad = m(r#"{"name": "Bad", "agent_types": [{"name": "A", "creates_type": true,
            "state_vars": [{"name": "flag", "kind": "boolean", "init": false}],
            "behaviours": [
                {"name": "w", "actions": [{"op": "set", "var": "nope", "value": 1}]},
                {"name": "x", "actions": [{"op": "add", "var": "flag", "value": 1}]},
                {"name": "y", "actions": [{"op": "set", "var": "flag", "value": "agent.missing"}]}
            ]}]}"#);
        let err = compose(&CompositeModelSpec::base(), &[bad]).unwrap_err();
        let codes: Vec<Code> = err.errors.iter().map(|d| d.code).collect();
        assert!(codes.contains(&Code::UnknownVariable));
        assert!(codes.contains(&Code::TypeMismatch));
        assert!(codes.contains(&Code::UnboundVariable));
    }

    #[test]
    fn initializers_read_only_earlier_vars() {
        let ok = m(r#"{"name": "A", "model_vars": [{"name": "wage", "kind": "number", "init": 10}],
            "agent_types": [{"name": "T", "creates_type": true, "state_vars": [
                {"name": "a", "kind": "number", "init": "model.wage * 2"},
                {"name": "b", "kind": "number", "init": "agent.a + 1"}]}]}"#);
        let spec = compose(&CompositeModelSpec::base(), &[ok]).unwrap();
        let order: Vec<&str> = spec.agent_types["T"].init_order().iter().map(|v| v.decl.name.as_str()).collect();
        assert_eq!(order, ["a", "b"]);

        let forward = m(r#"{"name": "B", "agent_types": [{"name": "T", "creates_type": true, "state_vars": [
                {"name": "a", "kind": "number", "init": "agent.b"},
                {"name": "b", "kind": "number", "init": 1}]}]}"#);
        let err = compose(&CompositeModelSpec::base(), &[forward]).unwrap_err();
        assert_eq!(err.errors[0].code, Code::InitOrder);
    }

    #[test]
    fn provenance_is_total() {
        let spec = compose(&CompositeModelSpec::base(), &[migrant()]).unwrap();
        let p = spec.provenance();
        assert_eq!(p["type:Migrant"], "MigrantFacet");
        assert_eq!(p["var:Migrant.income"], "MigrantFacet");
        assert_eq!(p["behaviour:Migrant.apply-for-job"], "MigrantFacet");
        assert_eq!(p["model_var:tick"], BASE_FACET);
        assert_eq!(p.len(), 5);
    }
}
