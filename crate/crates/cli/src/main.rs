//! `facetflow`: validate workspace artifacts, run scenarios into archives,
//! emit skeleton flows and compare archived runs.
//!
//! Exit status is 0 on success, 1 for invalid input (including missing
//! files) and 2 when a run fails or results cannot be stored.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facetflow::diag::{Code, Diagnostic, ValidationReport};
use facetflow::facet::{compose, parse_manifest, resolve_dependencies, CompositeModelSpec};
use facetflow::flow::emit_skeleton_flow;
use facetflow::scenario::{
    check_facet, check_flow, check_policy, compare_runs, load_scenario, persist_run, run_scenario, workspace_model,
    RunArchive, ScenarioError, Workspace, FACETS_DIR, FLOWS_DIR, POLICIES_DIR, SCENARIOS_DIR,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "facetflow", version, about = "Facet-composable agent-based simulation")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate facets, flows, policies and scenarios.
    Validate {
        #[command(flatten)]
        ws: WorkspaceArg,
        /// Files or workspace directories; defaults to the workspace.
        paths: Vec<PathBuf>,
    },
    /// Run a scenario and archive the results.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory for the archive [default: <workspace>/runs].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed; the archive records the seed used.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        ws: WorkspaceArg,
    },
    /// Write a skeleton flow with one unlinked node per behaviour.
    NewFlow {
        #[arg(long)]
        agent_type: String,
        /// Facets that define the type [default: every workspace facet].
        #[arg(long, value_delimiter = ',')]
        facets: Vec<String>,
        /// Output file [default: <workspace>/flows/<agent-type>.graphml].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing file.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        ws: WorkspaceArg,
    },
    /// Compare archived runs: an aligned CSV table, a blank line, then a
    /// per-metric summary.
    Compare {
        #[arg(required = true)]
        archives: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct WorkspaceArg {
    /// Workspace root [default: inferred from the paths given, else `.`].
    #[arg(long)]
    workspace: Option<PathBuf>,
}

/// Directory holding `facets/`, `flows/`, ... for a file inside one of them.
fn infer_workspace(file: &Path) -> PathBuf {
    let parent = file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let in_artifact_dir = parent
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| [FACETS_DIR, FLOWS_DIR, POLICIES_DIR, SCENARIOS_DIR].contains(&n));
    if in_artifact_dir {
        parent.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf()
    } else {
        parent.to_path_buf()
    }
}

struct Output {
    json: bool,
}

impl Output {
    fn report(&self, report: &ValidationReport) {
        if self.json {
            println!("{}", json!({"ok": report.is_ok(), "errors": report.errors, "warnings": report.warnings}));
            return;
        }
        for d in &report.errors {
            eprintln!("error: {d}");
        }
        for d in &report.warnings {
            eprintln!("warning: {d}");
        }
    }

    fn failure(&self, e: &ScenarioError) -> ExitCode {
        match e {
            ScenarioError::Invalid(r) => self.report(r),
            ScenarioError::Run(_) | ScenarioError::Io(_) => {
                let d = Diagnostic::bare(Code::Runtime, e.to_string());
                self.report(&d.into());
            }
        }
        ExitCode::from(e.exit_code() as u8)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let out = Output { json: cli.json };
    match cli.command {
        Command::Validate { ws, paths } => validate(&out, ws.workspace, paths),
        Command::Run { scenario, out: dir, seed, ws } => run(&out, &scenario, dir, seed, ws.workspace),
        Command::NewFlow { agent_type, facets, out: file, force, ws } => {
            new_flow(&out, &agent_type, &facets, file, force, ws.workspace)
        }
        Command::Compare { archives } => compare(&out, &archives),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Facet,
    Flow,
    Policy,
    Scenario,
}

fn classify(path: &Path) -> Option<Kind> {
    let ext = path.extension().and_then(|e| e.to_str())?;
    if ext == "graphml" {
        return Some(Kind::Flow);
    }
    if ext != "json" {
        return None;
    }
    let dir = path.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str());
    match dir {
        Some(FACETS_DIR) => Some(Kind::Facet),
        Some(POLICIES_DIR) => Some(Kind::Policy),
        Some(SCENARIOS_DIR) => Some(Kind::Scenario),
        _ => {
            let v: serde_json::Value = fs::read_to_string(path).ok().and_then(|t| serde_json::from_str(&t).ok())?;
            Some(if v.get("globals").is_some() {
                Kind::Scenario
            } else if v.get("target_agent_type").is_some() {
                Kind::Policy
            } else {
                Kind::Facet
            })
        }
    }
}

fn workspace_files(root: &Path) -> Vec<PathBuf> {
    let ws = Workspace::new(root);
    let mut out = Vec::new();
    for (dir, ext) in [(FACETS_DIR, "json"), (FLOWS_DIR, "graphml"), (POLICIES_DIR, "json"), (SCENARIOS_DIR, "json")] {
        out.extend(ws.list(dir, ext).into_iter().map(|stem| root.join(dir).join(format!("{stem}.{ext}"))));
    }
    out
}

fn validate(out: &Output, workspace: Option<PathBuf>, paths: Vec<PathBuf>) -> ExitCode {
    let paths = if paths.is_empty() { vec![workspace.clone().unwrap_or_else(|| PathBuf::from("."))] } else { paths };
    let mut report = ValidationReport::new();
    let mut models: Vec<(PathBuf, Option<CompositeModelSpec>)> = Vec::new();
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            files.extend(workspace_files(&p).into_iter().map(|f| (f, Some(p.clone()))));
        } else {
            files.push((p, None));
        }
    }
    if files.is_empty() {
        report.error(Diagnostic::bare(Code::FileNotFound, "nothing to validate"));
    }
    for (file, root) in files {
        let label = file.display().to_string();
        let text = match fs::read_to_string(&file) {
            Ok(t) => t,
            Err(e) => {
                report.error(Diagnostic::at(Code::FileNotFound, label, e.to_string()));
                continue;
            }
        };
        let root = workspace.clone().or(root).unwrap_or_else(|| infer_workspace(&file));
        let ws = Workspace::new(&root);
        let mut model = |report: &mut ValidationReport| -> Option<CompositeModelSpec> {
            if let Some((_, m)) = models.iter().find(|(r, _)| *r == root) {
                return m.clone();
            }
            let m = match workspace_model(&ws) {
                Ok(m) => Some(m),
                Err(r) => {
                    report.merge_within(r, &format!("workspace {}", root.display()));
                    None
                }
            };
            models.push((root.clone(), m.clone()));
            m
        };
        let found = match classify(&file) {
            None => Diagnostic::at(Code::SchemaViolation, label.clone(), "not a facet, flow, policy or scenario").into(),
            Some(Kind::Facet) => {
                let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                if ws.facet_path(stem).exists() {
                    check_facet(&ws, stem)
                } else {
                    match parse_manifest(&text) {
                        Ok(m) => standalone_facet(&ws, m),
                        Err(r) => r,
                    }
                }
            }
            Some(Kind::Flow) => match model(&mut report) {
                Some(m) => check_flow(&text, &m, None).1,
                None => continue,
            },
            Some(Kind::Policy) => match model(&mut report) {
                Some(m) => check_policy(&text, &m).1,
                None => continue,
            },
            Some(Kind::Scenario) => load_scenario(&text, &ws).map(|s| ValidationReport { errors: vec![], warnings: s.warnings }).unwrap_or_else(|r| r),
        };
        report.merge_within(found, &label);
    }
    out.report(&report);
    if !out.json {
        eprintln!("{} error(s), {} warning(s)", report.errors.len(), report.warnings.len());
    }
    if report.is_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

/// A facet outside `facets/`: composed with whatever it depends on.
fn standalone_facet(ws: &Workspace, m: facetflow::facet::FacetManifest) -> ValidationReport {
    let mut report = ValidationReport::new();
    let mut available = std::collections::BTreeMap::new();
    let mut selection = vec![];
    for dep in &m.depends_on {
        if let Ok((d, _)) = ws.load_facet(dep) {
            selection.push(dep.clone());
            available.insert(dep.clone(), d);
        }
    }
    selection.push(m.name.clone());
    available.insert(m.name.clone(), m);
    match resolve_dependencies(&selection, &available) {
        Ok(order) => {
            let ms: Vec<_> = order.iter().map(|n| available[n].clone()).collect();
            if let Err(r) = compose(&CompositeModelSpec::base(), &ms) {
                report.merge(r);
            }
        }
        Err(e) => report.error(e.to_diagnostic()),
    }
    report
}

fn run(out: &Output, scenario: &Path, dir: Option<PathBuf>, seed: Option<u64>, workspace: Option<PathBuf>) -> ExitCode {
    let text = match fs::read_to_string(scenario) {
        Ok(t) => t,
        Err(e) => {
            out.report(&Diagnostic::at(Code::FileNotFound, scenario.display().to_string(), e.to_string()).into());
            return ExitCode::from(1);
        }
    };
    let ws = Workspace::new(workspace.unwrap_or_else(|| infer_workspace(scenario)));
    let result = (|| {
        let mut s = load_scenario(&text, &ws)?;
        if let Some(seed) = seed {
            s = s.with_seed(seed);
        }
        if !out.json {
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
        }
        let r = run_scenario(&s, |_, _| {})?;
        let archive = persist_run(&s, &r, &dir.unwrap_or_else(|| ws.runs_dir()))?;
        Ok::<_, ScenarioError>((archive, r))
    })();
    match result {
        Ok((archive, r)) => {
            if out.json {
                println!(
                    "{}",
                    json!({
                        "ok": true,
                        "run_id": archive.run_id(),
                        "archive": archive.dir,
                        "seed": archive.meta.seed,
                        "content_hash": archive.meta.content_hash(),
                        "warnings": r.warnings,
                    })
                );
            } else {
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
                println!("{}", archive.dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => out.failure(&e),
    }
}

fn new_flow(
    out: &Output,
    agent_type: &str,
    facets: &[String],
    file: Option<PathBuf>,
    force: bool,
    workspace: Option<PathBuf>,
) -> ExitCode {
    let ws = Workspace::new(workspace.unwrap_or_else(|| PathBuf::from(".")));
    let model = if facets.is_empty() {
        workspace_model(&ws)
    } else {
        let mut report = ValidationReport::new();
        let mut available = std::collections::BTreeMap::new();
        for f in facets {
            match ws.load_facet(f) {
                Ok((m, _)) => {
                    available.insert(f.clone(), m);
                }
                Err(r) => report.merge(r),
            }
        }
        if report.is_ok() {
            resolve_dependencies(facets, &available)
                .map_err(|e| ValidationReport::from(e.to_diagnostic()))
                .and_then(|order| {
                    let ms: Vec<_> = order.iter().map(|n| available[n].clone()).collect();
                    compose(&CompositeModelSpec::base(), &ms)
                })
        } else {
            Err(report)
        }
    };
    let model = match model {
        Ok(m) => m,
        Err(r) => {
            out.report(&r);
            return ExitCode::from(1);
        }
    };
    let Some(schema) = model.schema(agent_type) else {
        let d = Diagnostic::at(Code::UnknownAgentType, agent_type, format!("no facet defines agent type `{agent_type}`"));
        out.report(&d.into());
        return ExitCode::from(1);
    };
    let path = file.unwrap_or_else(|| ws.flow_path(agent_type));
    if path.exists() && !force {
        let d = Diagnostic::at(Code::Conflict, path.display().to_string(), "file exists; pass --force to replace it");
        out.report(&d.into());
        return ExitCode::from(1);
    }
    let written = path
        .parent()
        .map_or(Ok(()), |p| if p.as_os_str().is_empty() { Ok(()) } else { fs::create_dir_all(p) })
        .and_then(|_| fs::write(&path, emit_skeleton_flow(&schema)));
    if let Err(e) = written {
        out.report(&Diagnostic::at(Code::Io, path.display().to_string(), e.to_string()).into());
        return ExitCode::from(2);
    }
    if out.json {
        println!("{}", json!({"ok": true, "path": path, "nodes": schema.behaviours.len() + 1}));
    } else {
        println!("{}", path.display());
    }
    ExitCode::SUCCESS
}

fn compare(out: &Output, paths: &[PathBuf]) -> ExitCode {
    let mut report = ValidationReport::new();
    let mut archives = Vec::new();
    for p in paths {
        match RunArchive::open(p) {
            Ok(a) => archives.push(a),
            Err(r) => report.merge_within(r, &p.display().to_string()),
        }
    }
    if !report.is_ok() {
        out.report(&report);
        return ExitCode::from(1);
    }
    match compare_runs(&archives) {
        Ok(c) => {
            if out.json {
                println!("{}", serde_json::to_string(&c).expect("comparison serializes"));
            } else {
                // a closed pipe (`| head`) is not an error
                let _ = write!(std::io::stdout().lock(), "{}\n{}", c.table_csv(), c.summary_csv());
            }
            ExitCode::SUCCESS
        }
        Err(d) => {
            out.report(&d.into());
            ExitCode::from(1)
        }
    }
}
