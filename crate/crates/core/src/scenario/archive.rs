use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::workspace::{is_contained, read_text, Workspace, FACETS_DIR, FLOWS_DIR};
use super::{load_scenario, run_scenario, Scenario, ScenarioError};
use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::sim::{MetricTable, RunResult};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

const SCENARIO_FILE: &str = "scenario.json";
const METRICS_FILE: &str = "metrics.csv";
const WARNINGS_FILE: &str = "warnings.log";
const META_FILE: &str = "meta.json";

/// `meta.json`: run identity plus a SHA-256 for every other file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub run_id: String,
    pub scenario: String,
    pub seed: u64,
    pub engine_version: String,
    /// Archive-relative path to lowercase hex digest.
    pub hashes: BTreeMap<String, String>,
}

impl ArchiveMeta {
    /// Digest over the file list; equal for archives with equal contents.
    pub fn content_hash(&self) -> String {
        content_hash(&self.hashes)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn content_hash(hashes: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (path, digest) in hashes {
        h.update(path.as_bytes());
        h.update(b"\t");
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// A persisted run: the self-contained scenario, its facets and flows, and
/// the results.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArchive {
    pub dir: PathBuf,
    pub meta: ArchiveMeta,
    pub table: MetricTable,
}

fn io_err(path: &Path, e: io::Error) -> ScenarioError {
    ScenarioError::Io(format!("{}: {e}", path.display()))
}

/// Writes `<out>/<scenario>-<hash8>-<n>/`. The hash covers the archive
/// contents; `n` is the first counter value not already taken, so persisting
/// one result twice gives equal hashes and distinct run ids.
pub fn persist_run(scenario: &Scenario, result: &RunResult, out: &Path) -> Result<RunArchive, ScenarioError> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut doc = scenario.self_contained();
    doc.globals.seed = result.seed;
    files.insert(SCENARIO_FILE.into(), doc.to_json().into_bytes());
    for (name, text) in &scenario.facet_sources {
        files.insert(format!("{FACETS_DIR}/{name}.json"), text.clone().into_bytes());
    }
    for (t, text) in &scenario.flow_sources {
        files.insert(format!("{FLOWS_DIR}/{t}.graphml"), text.clone().into_bytes());
    }
    files.insert(METRICS_FILE.into(), result.metrics_csv().into_bytes());
    files.insert(WARNINGS_FILE.into(), result.warnings_log().into_bytes());

    let hashes: BTreeMap<String, String> = files.iter().map(|(p, b)| (p.clone(), sha256_hex(b))).collect();
    let stem = format!("{}-{}", scenario.name(), &content_hash(&hashes)[..8]);

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let (run_id, dir) = (1u64..)
        .map(|n| {
            let id = format!("{stem}-{n}");
            let dir = out.join(&id);
            (id, dir)
        })
        .find_map(|(id, dir)| match fs::create_dir(&dir) {
            Ok(()) => Some(Ok((id, dir))),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => None,
            Err(e) => Some(Err(io_err(&dir, e))),
        })
        .expect("counter is unbounded")?;

    for (rel, bytes) in &files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    }
    let meta = ArchiveMeta {
        run_id,
        scenario: scenario.name().to_string(),
        seed: result.seed,
        engine_version: ENGINE_VERSION.to_string(),
        hashes,
    };
    let mut meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_json.push('\n');
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, meta_json).map_err(|e| io_err(&meta_path, e))?;
    Ok(RunArchive { dir, meta, table: result.table.clone() })
}

impl RunArchive {
    /// Opens an archive, verifying every recorded hash.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ValidationReport> {
        let dir = dir.as_ref();
        let meta_text = read_text(&dir.join(META_FILE), META_FILE)?;
        let meta: ArchiveMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Diagnostic::at(Code::MalformedJson, META_FILE, e.to_string()))?;
        let mut report = ValidationReport::new();
        for (rel, want) in &meta.hashes {
            if !is_contained(rel) {
                report.error(Diagnostic::at(Code::SchemaViolation, rel.clone(), "path escapes the archive"));
                continue;
            }
            match fs::read(dir.join(rel)) {
                Ok(bytes) if sha256_hex(&bytes) == *want => {}
                Ok(_) => report.error(Diagnostic::at(Code::HashMismatch, rel.clone(), "content does not match its recorded hash")),
                Err(e) => report.error(Diagnostic::at(Code::FileNotFound, rel.clone(), e.to_string())),
            }
        }
        for required in [SCENARIO_FILE, METRICS_FILE] {
            if !meta.hashes.contains_key(required) {
                report.error(Diagnostic::at(Code::SchemaViolation, META_FILE, format!("no hash recorded for {required}")));
            }
        }
        if !report.is_ok() {
            return Err(report);
        }
        let csv = read_text(&dir.join(METRICS_FILE), METRICS_FILE)?;
        let table = MetricTable::from_csv(&csv).map_err(|e| Diagnostic::at(Code::SchemaViolation, METRICS_FILE, e))?;
        Ok(Self { dir: dir.to_path_buf(), meta, table })
    }

    pub fn run_id(&self) -> &str {
        &self.meta.run_id
    }

    pub fn metrics_csv(&self) -> io::Result<String> {
        fs::read_to_string(self.dir.join(METRICS_FILE))
    }

    pub fn warnings_log(&self) -> io::Result<String> {
        fs::read_to_string(self.dir.join(WARNINGS_FILE))
    }

    pub fn scenario_json(&self) -> io::Result<String> {
        fs::read_to_string(self.dir.join(SCENARIO_FILE))
    }

    /// Loads the archived scenario with the archive itself as workspace.
    pub fn scenario(&self) -> Result<Scenario, ScenarioError> {
        let text = self.scenario_json().map_err(|e| io_err(&self.dir.join(SCENARIO_FILE), e))?;
        Ok(load_scenario(&text, &Workspace::new(&self.dir))?)
    }

    /// Runs the archived scenario again.
    pub fn rerun(&self) -> Result<RunResult, ScenarioError> {
        run_scenario(&self.scenario()?, |_, _| {})
    }
}
