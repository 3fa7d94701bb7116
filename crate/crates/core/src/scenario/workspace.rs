use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::facet::{parse_manifest, FacetManifest};

pub const FACETS_DIR: &str = "facets";
pub const FLOWS_DIR: &str = "flows";
pub const POLICIES_DIR: &str = "policies";
pub const SCENARIOS_DIR: &str = "scenarios";
pub const RUNS_DIR: &str = "runs";

/// A directory of artifacts:
///
/// ```text
/// facets/<FacetName>.json
/// flows/<AgentType>.graphml
/// policies/<policy-name>.json
/// scenarios/<scenario-name>.json
/// runs/<run-id>/            (archives written by runs)
/// ```
///
/// Scenarios refer to flows and policies by paths relative to the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

/// Artifact names double as file names: letters, digits, `-`, `_`, `.`,
/// not starting with a dot.
pub fn is_artifact_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// A relative path that stays inside the directory it is joined to.
pub fn is_contained(rel: &str) -> bool {
    let p = Path::new(rel);
    !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

pub(crate) fn read_text(path: &Path, subject: &str) -> Result<String, Diagnostic> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Diagnostic::at(Code::FileNotFound, subject, format!("{} not found", path.display())),
        _ => Diagnostic::at(Code::Io, subject, format!("{}: {e}", path.display())),
    })
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn facet_path(&self, name: &str) -> PathBuf {
        self.root.join(FACETS_DIR).join(format!("{name}.json"))
    }

    pub fn flow_path(&self, agent_type: &str) -> PathBuf {
        self.root.join(FLOWS_DIR).join(format!("{agent_type}.graphml"))
    }

    pub fn policy_path(&self, name: &str) -> PathBuf {
        self.root.join(POLICIES_DIR).join(format!("{name}.json"))
    }

    pub fn scenario_path(&self, name: &str) -> PathBuf {
        self.root.join(SCENARIOS_DIR).join(format!("{name}.json"))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join(RUNS_DIR)
    }

    /// Reads a file named by a root-relative path from a document.
    pub fn read_relative(&self, rel: &str) -> Result<String, Diagnostic> {
        if !is_contained(rel) {
            return Err(Diagnostic::at(Code::SchemaViolation, rel, "paths must be relative and stay inside the workspace"));
        }
        read_text(&self.root.join(rel), rel)
    }

    /// File stems in `dir` with extension `ext`, sorted.
    pub fn list(&self, dir: &str, ext: &str) -> Vec<String> {
        let Ok(entries) = fs::read_dir(self.root.join(dir)) else {
            return Vec::new();
        };
        let mut out: Vec<String> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect();
        out.sort();
        out
    }

    pub fn facet_names(&self) -> Vec<String> {
        self.list(FACETS_DIR, "json")
    }

    /// Loads `facets/<name>.json`, returning the manifest and its text. The
    /// manifest's own name must match the file name.
    pub fn load_facet(&self, name: &str) -> Result<(FacetManifest, String), ValidationReport> {
        let subject = format!("{FACETS_DIR}/{name}.json");
        if !is_artifact_name(name) {
            return Err(Diagnostic::at(Code::UnknownFacet, "facets", format!("invalid facet name `{name}`")).into());
        }
        let text = match read_text(&self.facet_path(name), &subject) {
            Ok(t) => t,
            Err(d) if d.code == Code::FileNotFound => {
                return Err(Diagnostic::at(Code::UnknownFacet, "facets", format!("no facet `{name}` ({subject})")).into())
            }
            Err(d) => return Err(d.into()),
        };
        let m = parse_manifest(&text).map_err(|r| {
            let mut out = ValidationReport::new();
            out.merge_within(r, &subject);
            out
        })?;
        if m.name != name {
            return Err(Diagnostic::at(
                Code::FacetNameMismatch,
                subject,
                format!("file declares facet `{}`", m.name),
            )
            .into());
        }
        Ok((m, text))
    }

    /// Every facet in the workspace, plus problems with unreadable ones.
    pub fn load_all_facets(&self) -> (BTreeMap<String, FacetManifest>, ValidationReport) {
        let mut report = ValidationReport::new();
        let mut out = BTreeMap::new();
        for name in self.facet_names() {
            match self.load_facet(&name) {
                Ok((m, _)) => {
                    out.insert(name, m);
                }
                Err(r) => report.merge(r),
            }
        }
        (out, report)
    }
}
