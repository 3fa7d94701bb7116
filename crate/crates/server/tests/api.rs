mod common;

use axum::http::StatusCode;
use common::{demo, demo_copy, send, wait_for};
use facetflow::scenario::Workspace;
use facetflow_server::router;

fn migrant_flow() -> String {
    std::fs::read_to_string(demo().join("flows/Migrant.graphml")).unwrap()
}

#[tokio::test]
async fn lists_facets() {
    let ws = demo_copy();
    let app = router(Workspace::new(ws.path()));
    let r = send(&app, "GET", "/facets", None, &[]).await;
    assert_eq!(r.status, StatusCode::OK);
    let names: Vec<String> = r.json().as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap().into()).collect();
    assert_eq!(names, ["DocumentsFacet", "HealthFacet", "JobMarketFacet", "LicenceFacet", "LockdownFacet", "MigrantFacet"]);
    let health = &r.json()[1];
    assert_eq!(health["depends_on"], serde_json::json!(["MigrantFacet"]));
    assert_eq!(health["agent_types"], serde_json::json!(["Migrant"]));
}

#[tokio::test]
async fn subsidy_policy_is_created() {
    let ws = demo_copy();
    let subsidy = std::fs::read_to_string(ws.path().join("policies/insurance-subsidy.json")).unwrap();
    std::fs::remove_file(ws.path().join("policies/insurance-subsidy.json")).unwrap();
    let app = router(Workspace::new(ws.path()));

    let r = send(&app, "POST", "/policies", Some(&subsidy), &[]).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    assert_eq!(r.headers["location"], "/policies/insurance-subsidy");
    let sent: serde_json::Value = serde_json::from_str(&subsidy).unwrap();
    assert_eq!(r.json(), sent);
    assert_eq!(std::fs::read_to_string(ws.path().join("policies/insurance-subsidy.json")).unwrap(), subsidy);

    let got = send(&app, "GET", "/policies/insurance-subsidy", None, &[]).await;
    assert_eq!(got.json(), sent);
    assert_eq!(got.etag(), r.etag());
    let list = send(&app, "GET", "/policies", None, &[]).await.json();
    assert_eq!(list[0]["name"], "insurance-subsidy");

    let again = send(&app, "POST", "/policies", Some(&subsidy), &[]).await;
    assert_eq!(again.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn invalid_policies_are_rejected() {
    let ws = demo_copy();
    let app = router(Workspace::new(ws.path()));
    let bad_type = r#"{"name": "p", "target_agent_type": "Martian", "condition": "true",
        "action": {"op": "set", "variable": "income", "operand": "0"}, "mode": "once"}"#;
    let r = send(&app, "POST", "/policies", Some(bad_type), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error_codes(), ["UNKNOWN_AGENT_TYPE"]);
    assert_eq!(r.json()["ok"], false);

    let r = send(&app, "POST", "/policies", Some("{"), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error_codes(), ["MALFORMED_JSON"]);
}

#[tokio::test]
async fn policy_update_and_delete() {
    let ws = demo_copy();
    let app = router(Workspace::new(ws.path()));
    let current = send(&app, "GET", "/policies/insurance-subsidy", None, &[]).await;
    let tag = current.etag();
    let mut doc = current.json();
    doc["condition"] = "agent.income < 25000".into();
    let body = doc.to_string();

    let r = send(&app, "PUT", "/policies/insurance-subsidy", Some(&body), &[("if-match", "\"stale\"")]).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error_codes(), ["CONFLICT"]);
    let r = send(&app, "PUT", "/policies/insurance-subsidy", Some(&body), &[("if-match", &tag)]).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_ne!(r.etag(), tag);

    // the old tag no longer matches
    let r = send(&app, "DELETE", "/policies/insurance-subsidy", None, &[("if-match", &tag)]).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    doc["name"] = "other".into();
    let r = send(&app, "PUT", "/policies/insurance-subsidy", Some(&doc.to_string()), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = send(&app, "DELETE", "/policies/insurance-subsidy", None, &[]).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    let r = send(&app, "GET", "/policies/insurance-subsidy", None, &[]).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.error_codes(), ["NOT_FOUND"]);
    let r = send(&app, "PUT", "/policies/insurance-subsidy", Some(&body), &[]).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cyclic_flow_is_rejected() {
    let ws = demo_copy();
    let app = router(Workspace::new(ws.path()));
    let cyclic = migrant_flow().replace("</graph>", r#"<edge source="n3" target="n1"/></graph>"#);
    let r = send(&app, "PUT", "/flows/Migrant", Some(&cyclic), &[("content-type", "application/xml")]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.error_codes().contains(&"CYCLE".to_string()), "{}", r.text());
    // nothing was written
    assert_eq!(std::fs::read_to_string(ws.path().join("flows/Migrant.graphml")).unwrap(), migrant_flow());
}

#[tokio::test]
async fn flow_read_and_conditional_write() {
    let ws = demo_copy();
    let app = router(Workspace::new(ws.path()));
    let r = send(&app, "GET", "/flows/Migrant", None, &[]).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers["content-type"], "application/xml");
    assert_eq!(r.text(), migrant_flow());
    let tag = r.etag();

    let edited = migrant_flow().replace("\"default\": \"0.3\"", "\"default\": \"0.35\"");
    assert_ne!(edited, migrant_flow());
    let r = send(&app, "PUT", "/flows/Migrant", Some(&edited), &[("if-match", &tag)]).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let r = send(&app, "PUT", "/flows/Migrant", Some(&migrant_flow()), &[("if-match", &tag)]).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    assert_eq!(send(&app, "GET", "/flows/Nobody", None, &[]).await.status, StatusCode::NOT_FOUND);
    let r = send(&app, "PUT", "/flows/Nobody", Some(&migrant_flow()), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error_codes(), ["UNKNOWN_AGENT_TYPE"]);
}

#[tokio::test]
async fn scenarios_are_validated_on_create() {
    let ws = demo_copy();
    let app = router(Workspace::new(ws.path()));
    let names: Vec<String> = send(&app, "GET", "/scenarios", None, &[]).await.json().as_array().unwrap()
        .iter().map(|s| s["name"].as_str().unwrap().into()).collect();
    assert!(names.contains(&"documents".to_string()));

    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path().join("scenarios/documents.json")).unwrap()).unwrap();
    let r = send(&app, "POST", "/scenarios", Some(&doc.to_string()), &[]).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    doc["name"] = "documents-long".into();
    doc["globals"]["iterations"] = 48.into();
    let r = send(&app, "POST", "/scenarios", Some(&doc.to_string()), &[]).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    assert!(ws.path().join("scenarios/documents-long.json").is_file());

    doc["name"] = "broken".into();
    doc["facets"] = serde_json::json!(["NoSuchFacet"]);
    let r = send(&app, "POST", "/scenarios", Some(&doc.to_string()), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.error_codes().contains(&"UNKNOWN_FACET".to_string()), "{}", r.text());
}

#[tokio::test]
async fn runs_execute_in_background() {
    let ws = demo_copy();
    let app = router(Workspace::new(ws.path()));
    let r = send(&app, "POST", "/runs", Some(r#"{"scenario": "documents", "seed": 5}"#), &[]).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.text());
    let job = r.json();
    let id = job["id"].as_str().unwrap().to_string();
    assert_eq!(r.headers["location"], format!("/runs/{id}"));
    assert_eq!(job["seed"], 5);
    assert_eq!(job["progress"]["total"], 24);

    let done = wait_for(&app, &id).await;
    assert_eq!(done["state"], "done", "{done}");
    assert_eq!(done["progress"], serde_json::json!({"done": 24, "total": 24}));
    let run_id = done["run_id"].as_str().unwrap().to_string();
    assert!(ws.path().join("runs").join(&run_id).join("meta.json").is_file());

    let m = send(&app, "GET", &format!("/runs/{id}/metrics"), None, &[]).await.json();
    assert_eq!(m["metrics"], serde_json::json!(["with_pps", "with_bank_account", "with_gp"]));
    assert_eq!(m["ticks"].as_array().unwrap().len(), 24);
    // the same series through the archive id
    let by_archive = send(&app, "GET", &format!("/runs/{run_id}/metrics"), None, &[]).await.json();
    assert_eq!(by_archive, m);
    let status = send(&app, "GET", &format!("/runs/{run_id}"), None, &[]).await.json();
    assert_eq!(status["state"], "done");
    assert_eq!(status["seed"], 5);

    let r = send(&app, "POST", "/runs", Some(r#"{"scenario": "documents", "seed": 6}"#), &[]).await;
    let other = r.json()["id"].as_str().unwrap().to_string();
    wait_for(&app, &other).await;
    let c = send(&app, "GET", &format!("/compare?runs={id},{other}"), None, &[]).await;
    assert_eq!(c.status, StatusCode::OK, "{}", c.text());
    assert_eq!(c.json()["columns"].as_array().unwrap().len(), 6);

    let c = send(&app, "GET", &format!("/compare?runs={id}"), None, &[]).await;
    assert_eq!(c.status, StatusCode::BAD_REQUEST);
    assert_eq!(c.error_codes(), ["TOO_FEW_RUNS"]);
    let c = send(&app, "GET", &format!("/compare?runs={id},nope"), None, &[]).await;
    assert_eq!(c.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn run_request_errors() {
    let ws = demo_copy();
    let app = router(Workspace::new(ws.path()));
    let r = send(&app, "POST", "/runs", Some(r#"{"scenario": "nope"}"#), &[]).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = send(&app, "POST", "/runs", Some(r#"{"scenario": "documents", "extra": 1}"#), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "GET", "/runs/job-99", None, &[]).await.status, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, "GET", "/runs/job-99/metrics", None, &[]).await.status, StatusCode::NOT_FOUND);

    std::fs::remove_file(ws.path().join("flows/Migrant.graphml")).unwrap();
    let r = send(&app, "POST", "/runs", Some(r#"{"scenario": "documents"}"#), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.error_codes().contains(&"FILE_NOT_FOUND".to_string()), "{}", r.text());
}
