//! REST API over a workspace directory.
//!
//! Artifacts are stored as files in the workspace and every write goes
//! through the same validators as the command-line tool. Writes accept an
//! `If-Match` header carrying the `ETag` from a previous read (a quoted
//! SHA-256 of the file); a stale tag gives 409. Runs execute on a worker
//! thread each and are polled through `GET /runs/{id}`.
//!
//! Error bodies are validation reports:
//! `{"ok": false, "errors": [{"code", "subject", "message"}], "warnings": []}`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use facetflow::diag::{Code, Diagnostic, ValidationReport};
use facetflow::scenario::{
    check_flow, check_policy, compare_runs, is_artifact_name, load_scenario, persist_run, run_scenario,
    workspace_model, RunArchive, Workspace, FLOWS_DIR, POLICIES_DIR, SCENARIOS_DIR,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub done: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunJob {
    pub id: String,
    pub scenario: String,
    pub seed: u64,
    pub state: JobState,
    pub progress: Progress,
    /// Archive id once the run is stored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<Vec<Diagnostic>>,
}

impl RunJob {
    /// States only move forward.
    fn advance(&mut self, to: JobState) {
        assert!(to >= self.state, "job {} cannot go from {:?} to {:?}", self.id, self.state, to);
        self.state = to;
    }
}

struct AppState {
    ws: Workspace,
    jobs: Mutex<(u64, BTreeMap<String, Arc<Mutex<RunJob>>>)>,
    /// Serializes read-check-write sequences on artifacts.
    writes: Mutex<()>,
}

pub fn router(workspace: Workspace) -> Router {
    let state = Arc::new(AppState { ws: workspace, jobs: Mutex::new((0, BTreeMap::new())), writes: Mutex::new(()) });
    Router::new()
        .route("/facets", get(list_facets))
        .route("/flows/{agent_type}", get(get_flow).put(put_flow))
        .route("/policies", get(list_policies).post(create_policy))
        .route("/policies/{name}", get(get_policy).put(update_policy).delete(delete_policy))
        .route("/scenarios", get(list_scenarios).post(create_scenario))
        .route("/runs", post(start_run))
        .route("/runs/{id}", get(run_status))
        .route("/runs/{id}/metrics", get(run_metrics))
        .route("/compare", get(compare))
        .with_state(state)
}

type Shared = State<Arc<AppState>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    report: ValidationReport,
}

impl ApiError {
    fn new(status: StatusCode, report: ValidationReport) -> Self {
        ApiError { status, report }
    }

    fn invalid(report: ValidationReport) -> Self {
        Self::new(StatusCode::BAD_REQUEST, report)
    }

    fn not_found(subject: &str, what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, Diagnostic::at(Code::NotFound, subject, format!("no {what} `{subject}`")).into())
    }

    fn conflict(subject: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, Diagnostic::at(Code::Conflict, subject, message).into())
    }

    fn internal(subject: &str, e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, Diagnostic::at(Code::Io, subject, e.to_string()).into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"ok": false, "errors": self.report.errors, "warnings": self.report.warnings});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn etag(text: &str) -> String {
    format!("\"{}\"", hex::encode(Sha256::digest(text.as_bytes())))
}

fn with_etag(mut resp: Response, text: &str) -> Response {
    resp.headers_mut().insert(header::ETAG, HeaderValue::from_str(&etag(text)).expect("hex is a valid header"));
    resp
}

/// `If-Match` against the stored text; absent header means unconditional.
fn check_if_match(headers: &HeaderMap, subject: &str, current: Option<&str>) -> ApiResult<()> {
    let Some(want) = headers.get(header::IF_MATCH) else {
        return Ok(());
    };
    let want = want.to_str().unwrap_or_default().trim();
    let ok = match current {
        Some(text) => want == "*" || want.split(',').any(|t| t.trim() == etag(text)),
        None => false,
    };
    if ok {
        Ok(())
    } else {
        Err(ApiError::conflict(subject, "the stored version has changed since it was read"))
    }
}

fn read_optional(path: &Path) -> ApiResult<Option<String>> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(Some(t)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ApiError::internal(&path.display().to_string(), e)),
    }
}

/// Write then rename so readers never see a partial file.
fn write_atomic(path: &Path, text: &str) -> ApiResult<()> {
    let subject = path.display().to_string();
    let dir = path.parent().expect("artifact paths have a parent");
    let tmp = dir.join(format!(".{}.tmp", path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact")));
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&tmp, text))
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| ApiError::internal(&subject, e))
}

fn parse_json(text: &str) -> ApiResult<Value> {
    serde_json::from_str(text)
        .map_err(|e| ApiError::invalid(Diagnostic::bare(Code::MalformedJson, e.to_string()).into()))
}

fn checked_name<'a>(name: &'a str, what: &str) -> ApiResult<&'a str> {
    if is_artifact_name(name) {
        Ok(name)
    } else {
        Err(ApiError::not_found(name, what))
    }
}

fn model(ws: &Workspace) -> ApiResult<facetflow::facet::CompositeModelSpec> {
    workspace_model(ws).map_err(ApiError::invalid)
}

fn accepted(report: &ValidationReport) -> Value {
    json!({"ok": true, "errors": [], "warnings": report.warnings})
}

/// Stored documents as `{"name", "document"}`, unparsable ones with a null
/// document.
fn list_documents(ws: &Workspace, dir: &str) -> Vec<Value> {
    ws.list(dir, "json")
        .into_iter()
        .map(|name| {
            let doc = fs::read_to_string(ws.root().join(dir).join(format!("{name}.json")))
                .ok()
                .and_then(|t| serde_json::from_str::<Value>(&t).ok())
                .unwrap_or(Value::Null);
            json!({"name": name, "document": doc})
        })
        .collect()
}

async fn list_facets(State(s): Shared) -> Json<Value> {
    let facets: Vec<Value> = s
        .ws
        .facet_names()
        .into_iter()
        .map(|name| match s.ws.load_facet(&name) {
            Ok((m, text)) => json!({
                "name": name,
                "description": m.description,
                "depends_on": m.depends_on,
                "agent_types": m.agent_types.iter().map(|t| &t.name).collect::<Vec<_>>(),
                "document": serde_json::from_str::<Value>(&text).unwrap_or(Value::Null),
            }),
            Err(r) => json!({"name": name, "errors": r.errors}),
        })
        .collect();
    Json(Value::Array(facets))
}

async fn get_flow(State(s): Shared, UrlPath(agent_type): UrlPath<String>) -> ApiResult<Response> {
    let t = checked_name(&agent_type, "flow")?;
    let text = read_optional(&s.ws.flow_path(t))?.ok_or_else(|| ApiError::not_found(t, "flow"))?;
    let resp = ([(header::CONTENT_TYPE, "application/xml")], text.clone()).into_response();
    Ok(with_etag(resp, &text))
}

async fn put_flow(
    State(s): Shared,
    UrlPath(agent_type): UrlPath<String>,
    headers: HeaderMap,
    body: String,
) -> ApiResult<Response> {
    if !is_artifact_name(&agent_type) {
        let d = Diagnostic::at(Code::SchemaViolation, agent_type.clone(), "invalid agent type name");
        return Err(ApiError::invalid(d.into()));
    }
    let path = s.ws.flow_path(&agent_type);
    let _guard = s.writes.lock().unwrap();
    let current = read_optional(&path)?;
    check_if_match(&headers, &format!("{FLOWS_DIR}/{agent_type}.graphml"), current.as_deref())?;
    let (_, report) = check_flow(&body, &model(&s.ws)?, Some(&agent_type));
    if !report.is_ok() {
        return Err(ApiError::invalid(report));
    }
    write_atomic(&path, &body)?;
    let status = if current.is_some() { StatusCode::OK } else { StatusCode::CREATED };
    Ok(with_etag((status, Json(accepted(&report))).into_response(), &body))
}

async fn list_policies(State(s): Shared) -> Json<Value> {
    Json(Value::Array(list_documents(&s.ws, POLICIES_DIR)))
}

async fn get_policy(State(s): Shared, UrlPath(name): UrlPath<String>) -> ApiResult<Response> {
    let name = checked_name(&name, "policy")?;
    let text = read_optional(&s.ws.policy_path(name))?.ok_or_else(|| ApiError::not_found(name, "policy"))?;
    Ok(with_etag(Json(parse_json(&text)?).into_response(), &text))
}

/// Validates a policy document and returns its declared name.
fn validated_policy(ws: &Workspace, body: &str) -> ApiResult<String> {
    parse_json(body)?;
    let (policy, report) = check_policy(body, &model(ws)?);
    match policy {
        Some(p) if report.is_ok() => {
            if is_artifact_name(&p.name) {
                Ok(p.name)
            } else {
                let d = Diagnostic::at(Code::SchemaViolation, "name", format!("invalid policy name `{}`", p.name));
                Err(ApiError::invalid(d.into()))
            }
        }
        _ => Err(ApiError::invalid(report)),
    }
}

async fn create_policy(State(s): Shared, body: String) -> ApiResult<Response> {
    let name = validated_policy(&s.ws, &body)?;
    let path = s.ws.policy_path(&name);
    let _guard = s.writes.lock().unwrap();
    if path.exists() {
        return Err(ApiError::conflict(&name, format!("policy `{name}` already exists")));
    }
    write_atomic(&path, &body)?;
    let mut resp = (StatusCode::CREATED, Json(parse_json(&body)?)).into_response();
    let location = HeaderValue::from_str(&format!("/policies/{name}")).expect("artifact names are header-safe");
    resp.headers_mut().insert(header::LOCATION, location);
    Ok(with_etag(resp, &body))
}

async fn update_policy(
    State(s): Shared,
    UrlPath(name): UrlPath<String>,
    headers: HeaderMap,
    body: String,
) -> ApiResult<Response> {
    let name = checked_name(&name, "policy")?;
    let path = s.ws.policy_path(name);
    let _guard = s.writes.lock().unwrap();
    let current = read_optional(&path)?.ok_or_else(|| ApiError::not_found(name, "policy"))?;
    check_if_match(&headers, name, Some(&current))?;
    let declared = validated_policy(&s.ws, &body)?;
    if declared != name {
        let d = Diagnostic::at(Code::SchemaViolation, "name", format!("body names policy `{declared}`, not `{name}`"));
        return Err(ApiError::invalid(d.into()));
    }
    write_atomic(&path, &body)?;
    Ok(with_etag(Json(parse_json(&body)?).into_response(), &body))
}

async fn delete_policy(State(s): Shared, UrlPath(name): UrlPath<String>, headers: HeaderMap) -> ApiResult<StatusCode> {
    let name = checked_name(&name, "policy")?;
    let path = s.ws.policy_path(name);
    let _guard = s.writes.lock().unwrap();
    let current = read_optional(&path)?.ok_or_else(|| ApiError::not_found(name, "policy"))?;
    check_if_match(&headers, name, Some(&current))?;
    fs::remove_file(&path).map_err(|e| ApiError::internal(name, e))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_scenarios(State(s): Shared) -> Json<Value> {
    Json(Value::Array(list_documents(&s.ws, SCENARIOS_DIR)))
}

async fn create_scenario(State(s): Shared, body: String) -> ApiResult<Response> {
    let doc = parse_json(&body)?;
    let scenario = load_scenario(&body, &s.ws).map_err(ApiError::invalid)?;
    let name = scenario.name().to_string();
    let path = s.ws.scenario_path(&name);
    let _guard = s.writes.lock().unwrap();
    if path.exists() {
        return Err(ApiError::conflict(&name, format!("scenario `{name}` already exists")));
    }
    write_atomic(&path, &body)?;
    let body = json!({"name": name, "document": doc, "warnings": scenario.warnings});
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    scenario: String,
    #[serde(default)]
    seed: Option<u64>,
}

async fn start_run(State(s): Shared, body: String) -> ApiResult<Response> {
    let req: RunRequest = serde_json::from_value(parse_json(&body)?)
        .map_err(|e| ApiError::invalid(Diagnostic::bare(Code::SchemaViolation, e.to_string()).into()))?;
    let name = checked_name(&req.scenario, "scenario")?;
    let text = read_optional(&s.ws.scenario_path(name))?.ok_or_else(|| ApiError::not_found(name, "scenario"))?;
    let mut scenario = load_scenario(&text, &s.ws).map_err(ApiError::invalid)?;
    if let Some(seed) = req.seed {
        scenario = scenario.with_seed(seed);
    }

    let job = {
        let mut jobs = s.jobs.lock().unwrap();
        jobs.0 += 1;
        let id = format!("job-{}", jobs.0);
        let job = Arc::new(Mutex::new(RunJob {
            id: id.clone(),
            scenario: name.to_string(),
            seed: scenario.setup.seed,
            state: JobState::Queued,
            progress: Progress { done: 0, total: scenario.setup.iterations },
            run_id: None,
            errors: None,
        }));
        jobs.1.insert(id, Arc::clone(&job));
        job
    };
    let snapshot = job.lock().unwrap().clone();

    let runs_dir = s.ws.runs_dir();
    std::thread::spawn(move || {
        job.lock().unwrap().advance(JobState::Running);
        let outcome = run_scenario(&scenario, |done, total| job.lock().unwrap().progress = Progress { done, total })
            .and_then(|r| persist_run(&scenario, &r, &runs_dir));
        let mut j = job.lock().unwrap();
        match outcome {
            Ok(archive) => {
                j.run_id = Some(archive.run_id().to_string());
                j.advance(JobState::Done);
            }
            Err(e) => {
                j.errors = Some(match e {
                    facetflow::scenario::ScenarioError::Invalid(r) => r.errors,
                    other => vec![Diagnostic::bare(Code::Runtime, other.to_string())],
                });
                j.advance(JobState::Failed);
            }
        }
    });

    let mut resp = (StatusCode::ACCEPTED, Json(&snapshot)).into_response();
    let location = HeaderValue::from_str(&format!("/runs/{}", snapshot.id)).expect("job ids are header-safe");
    resp.headers_mut().insert(header::LOCATION, location);
    Ok(resp)
}

enum RunRef {
    Job(RunJob),
    Archive(PathBuf),
}

/// A job id, or the id of an archive under `runs/`.
fn lookup_run(s: &AppState, id: &str) -> ApiResult<RunRef> {
    if let Some(job) = s.jobs.lock().unwrap().1.get(id) {
        return Ok(RunRef::Job(job.lock().unwrap().clone()));
    }
    let dir = s.ws.runs_dir().join(id);
    if is_artifact_name(id) && dir.join("meta.json").is_file() {
        Ok(RunRef::Archive(dir))
    } else {
        Err(ApiError::not_found(id, "run"))
    }
}

fn finished_archive(s: &AppState, id: &str) -> ApiResult<RunArchive> {
    let dir = match lookup_run(s, id)? {
        RunRef::Archive(dir) => dir,
        RunRef::Job(RunJob { run_id: Some(run_id), .. }) => s.ws.runs_dir().join(run_id),
        RunRef::Job(job) => {
            let state = serde_json::to_value(job.state).expect("state serializes");
            return Err(ApiError::conflict(id, format!("run has no results (state {state})")));
        }
    };
    RunArchive::open(&dir).map_err(|r| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, r))
}

async fn run_status(State(s): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    match lookup_run(&s, &id)? {
        RunRef::Job(job) => Ok(Json(serde_json::to_value(job).expect("job serializes"))),
        RunRef::Archive(dir) => {
            let a = RunArchive::open(&dir).map_err(|r| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, r))?;
            let rows = a.table.rows.len() as u64;
            Ok(Json(json!({
                "id": id,
                "scenario": a.meta.scenario,
                "seed": a.meta.seed,
                "state": JobState::Done,
                "progress": Progress { done: rows, total: rows },
                "run_id": a.meta.run_id,
            })))
        }
    }
}

/// Metric series: `{"run_id", "ticks", "metrics": [names], "series": {name: [values]}}`.
/// Null cells are JSON nulls.
async fn run_metrics(State(s): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let a = finished_archive(&s, &id)?;
    let series: serde_json::Map<String, Value> =
        a.table.names.iter().map(|n| (n.clone(), json!(a.table.column(n).expect("own column")))).collect();
    Ok(Json(json!({
        "run_id": a.run_id(),
        "ticks": a.table.ticks(),
        "metrics": a.table.names,
        "series": series,
    })))
}

async fn compare(State(s): Shared, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    let ids: Vec<&str> = q.get("runs").map(|r| r.split(',').filter(|x| !x.is_empty()).collect()).unwrap_or_default();
    let archives = ids.iter().map(|id| finished_archive(&s, id)).collect::<ApiResult<Vec<_>>>()?;
    let c = compare_runs(&archives).map_err(|d| ApiError::invalid(d.into()))?;
    Ok(Json(serde_json::to_value(c).expect("comparison serializes")))
}
