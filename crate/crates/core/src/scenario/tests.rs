use std::fs;
use std::path::{Path, PathBuf};

use super::*;

fn demo() -> Workspace {
    Workspace::new(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo"))
}

fn demo_scenario(name: &str) -> Scenario {
    let ws = demo();
    let text = fs::read_to_string(ws.scenario_path(name)).unwrap();
    load_scenario(&text, &ws).unwrap_or_else(|r| panic!("{name}: {r}"))
}

/// A scratch workspace with one facet and its flow.
fn scratch() -> (tempfile::TempDir, Workspace) {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    for d in [FACETS_DIR, FLOWS_DIR, POLICIES_DIR, SCENARIOS_DIR] {
        fs::create_dir(dir.path().join(d)).unwrap();
    }
    fs::write(
        ws.facet_path("PeopleFacet"),
        r#"{"name": "PeopleFacet", "agent_types": [{"name": "Person", "creates_type": true,
            "state_vars": [{"name": "x", "kind": "number", "init": 0}],
            "behaviours": [{"name": "inc", "actions": [{"op": "add", "var": "x", "value": 1}]}]}]}"#,
    )
    .unwrap();
    let flow = r#"<graphml><key id="d_label" for="node" attr.name="label"/><key id="d_trigger" for="node"/>
        <graph id="Person"><node id="s"><data key="d_label">start</data></node>
        <node id="a"><data key="d_label">inc</data><data key="d_trigger">{"default": "0.5"}</data></node>
        <edge source="s" target="a"/></graph></graphml>"#;
    fs::write(ws.flow_path("Person"), flow).unwrap();
    (dir, ws)
}

const MINIMAL: &str = r#"{"name": "minimal", "facets": ["PeopleFacet"],
    "flow_bindings": {"Person": "flows/Person.graphml"},
    "globals": {"iterations": 10, "seed": 1, "populations": {"Person": 5}},
    "metrics": [{"name": "total", "agent_type": "Person", "reducer": "sum", "variable": "x"}]}"#;

fn edited(edit: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
    edit(&mut v);
    v.to_string()
}

#[test]
fn every_demo_scenario_loads() {
    let names = demo().list(SCENARIOS_DIR, "json");
    assert!(names.len() >= 7, "{names:?}");
    for name in names {
        let s = demo_scenario(&name);
        assert_eq!(s.name(), name);
    }
}

#[test]
fn minimal_scenario() {
    let (_dir, ws) = scratch();
    let s = load_scenario(MINIMAL, &ws).unwrap();
    assert_eq!(s.setup.iterations, 10);
    assert_eq!(s.setup.data_collection_interval, 1);
    let r = run_scenario(&s, |_, _| {}).unwrap();
    assert_eq!(r.table.rows.len(), 10);
}

#[test]
fn missing_flow_binding() {
    let (_dir, ws) = scratch();
    let err = load_scenario(&edited(|v| v["flow_bindings"] = serde_json::json!({})), &ws).unwrap_err();
    assert_eq!(err.errors.len(), 1, "{err}");
    assert_eq!(err.errors[0].code, Code::MissingFlow);
    assert_eq!(err.errors[0].subject.as_deref(), Some("Person"));
}

#[test]
fn missing_dependencies_named_at_load() {
    let (_dir, ws) = scratch();
    fs::write(
        ws.facet_path("HousingFacet"),
        r#"{"name": "HousingFacet", "depends_on": ["SchoolFacet", "PublicTransportFacet"]}"#,
    )
    .unwrap();
    let err = load_scenario(&edited(|v| v["facets"] = serde_json::json!(["PeopleFacet", "HousingFacet"])), &ws)
        .unwrap_err();
    let d = err.errors.iter().find(|d| d.code == Code::MissingDependency).expect("MISSING_DEPENDENCY");
    assert!(d.message.contains("SchoolFacet") && d.message.contains("PublicTransportFacet"), "{d}");
}

#[test]
fn problems_are_aggregated() {
    let (_dir, ws) = scratch();
    let doc = edited(|v| {
        v["flow_bindings"]["Person"] = "flows/Nope.graphml".into();
        v["policies"] = serde_json::json!(["policies/absent.json", {"name": "p"}]);
        v["metrics"][0]["variable"] = "y".into();
        v["globals"]["iterations"] = 0.into();
    });
    let err = load_scenario(&doc, &ws).unwrap_err();
    for c in [Code::FileNotFound, Code::SchemaViolation, Code::UnknownVariable, Code::InvalidGlobals] {
        assert!(err.has_code(c), "{c}: {err}");
    }
    assert!(!err.has_code(Code::MissingFlow), "{err}");
}

#[test]
fn paths_stay_inside_workspace() {
    let (_dir, ws) = scratch();
    let err = load_scenario(&edited(|v| v["flow_bindings"]["Person"] = "../Person.graphml".into()), &ws).unwrap_err();
    assert_eq!(err.errors[0].code, Code::SchemaViolation);
}

#[test]
fn document_errors() {
    let (_dir, ws) = scratch();
    assert_eq!(load_scenario("{", &ws).unwrap_err().errors[0].code, Code::MalformedJson);
    let err = load_scenario(&edited(|v| v["extra"] = 1.into()), &ws).unwrap_err();
    assert_eq!(err.errors[0].code, Code::SchemaViolation);
}

#[test]
fn load_is_idempotent() {
    for name in ["documents", "subsidy-on", "subsidy-never", "jobmarket"] {
        let s = demo_scenario(name);
        let again = load_scenario(&s.document.to_json(), &demo()).unwrap();
        assert_eq!(again, s, "{name}");
    }
}

fn out_dir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn archives_rerun_byte_for_byte() {
    let out = out_dir();
    for name in demo().list(SCENARIOS_DIR, "json") {
        let s = demo_scenario(&name);
        let r = run_scenario(&s, |_, _| {}).unwrap();
        let a = persist_run(&s, &r, out.path()).unwrap();
        let opened = RunArchive::open(&a.dir).unwrap();
        assert_eq!(opened, a);
        let again = opened.rerun().unwrap();
        assert_eq!(again.metrics_csv(), opened.metrics_csv().unwrap(), "{name}");
        assert_eq!(again.warnings_log(), opened.warnings_log().unwrap(), "{name}");
    }
}

#[test]
fn repeated_persist_shares_hashes() {
    let out = out_dir();
    let s = demo_scenario("documents");
    let r = run_scenario(&s, |_, _| {}).unwrap();
    let a = persist_run(&s, &r, out.path()).unwrap();
    let b = persist_run(&s, &r, out.path()).unwrap();
    assert_eq!(a.meta.hashes, b.meta.hashes);
    assert_ne!(a.run_id(), b.run_id());
    assert!(a.run_id().starts_with("documents-"));
    assert!(a.run_id().ends_with("-1") && b.run_id().ends_with("-2"));

    // re-persisting the archived scenario reproduces the same contents
    let c = persist_run(&a.scenario().unwrap(), &a.rerun().unwrap(), out.path()).unwrap();
    assert_eq!(c.meta.hashes, a.meta.hashes);
}

#[test]
fn archive_records_seed_override() {
    let out = out_dir();
    let s = demo_scenario("documents").with_seed(43);
    let r = run_scenario(&s, |_, _| {}).unwrap();
    let a = persist_run(&s, &r, out.path()).unwrap();
    assert_eq!(a.meta.seed, 43);
    assert_eq!(a.scenario().unwrap().setup.seed, 43);
}

#[test]
fn tampering_is_detected() {
    let out = out_dir();
    let s = demo_scenario("documents");
    let a = persist_run(&s, &run_scenario(&s, |_, _| {}).unwrap(), out.path()).unwrap();
    let flow: PathBuf = a.dir.join("flows/Migrant.graphml");
    let mut bytes = fs::read(&flow).unwrap();
    let i = bytes.len() / 2;
    bytes[i] ^= 1;
    fs::write(&flow, bytes).unwrap();
    let err = RunArchive::open(&a.dir).unwrap_err();
    assert_eq!(err.errors[0].code, Code::HashMismatch);
    assert_eq!(err.errors[0].subject.as_deref(), Some("flows/Migrant.graphml"));
}

fn archive(name: &str, seed: Option<u64>, out: &Path) -> RunArchive {
    let mut s = demo_scenario(name);
    if let Some(seed) = seed {
        s = s.with_seed(seed);
    }
    let r = run_scenario(&s, |_, _| {}).unwrap();
    persist_run(&s, &r, out).unwrap()
}

#[test]
fn compare_two_seeds() {
    let out = out_dir();
    let a = archive("documents", Some(1), out.path());
    let b = archive("documents", Some(2), out.path());
    let c = compare_runs(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(c.metrics, ["with_pps", "with_bank_account", "with_gp"]);
    assert_eq!(c.columns.len(), 6);
    assert_eq!(c.ticks, (0..24).collect::<Vec<_>>());
    let header = c.table_csv().lines().next().unwrap().to_string();
    assert_eq!(header, format!("tick,with_pps[{0}],with_pps[{1}],with_bank_account[{0}],with_bank_account[{1}],with_gp[{0}],with_gp[{1}]", a.run_id(), b.run_id()));
    let last = a.table.rows.last().unwrap().values[0];
    assert_eq!(c.summary_for("with_pps", a.run_id()).unwrap().final_value, last);
}

#[test]
fn subsidy_lowers_mean_cost() {
    let out = out_dir();
    let on = archive("subsidy-on", None, out.path());
    let off = archive("subsidy-off", None, out.path());
    let c = compare_runs(&[on.clone(), off.clone()]).unwrap();
    let mean = |a: &RunArchive| c.summary_for("mean_insurance_cost", a.run_id()).unwrap().mean.unwrap();
    assert!(mean(&on) < mean(&off), "{} vs {}", mean(&on), mean(&off));
}

#[test]
fn compare_errors() {
    let out = out_dir();
    let docs = archive("documents", None, out.path());
    let lock = archive("licence", None, out.path());
    assert_eq!(compare_runs(&[docs.clone(), lock]).unwrap_err().code, Code::NoSharedMetrics);
    assert_eq!(compare_runs(&[docs]).unwrap_err().code, Code::TooFewRuns);
}

#[test]
fn compare_aligns_different_intervals() {
    let out = out_dir();
    let a = archive("jobmarket", None, out.path());
    let mut s = demo_scenario("jobmarket");
    s.setup.data_collection_interval = 6;
    s.document.globals.data_collection_interval = 6;
    let b = persist_run(&s, &run_scenario(&s, |_, _| {}).unwrap(), out.path()).unwrap();
    let c = compare_runs(&[a, b]).unwrap();
    assert_eq!(c.ticks, vec![0, 4, 6, 8, 12, 16, 18, 20, 23]);
    // b has no row at tick 4
    assert_eq!(c.columns[1].values[1], None);
    assert!(c.columns[0].values[1].is_some());
}
