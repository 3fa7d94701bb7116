//! Diagnostics shared by every validator (flows, facets, policies, scenarios).

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Code {
    // documents
    MalformedXml,
    MalformedJson,
    SchemaViolation,
    ExpressionParse,
    FileNotFound,
    Io,
    // behaviour flows
    DuplicateNode,
    UnknownNode,
    TriggerJson,
    NoStart,
    MultipleStart,
    StartHasParent,
    Cycle,
    DuplicateEdge,
    MissingBehaviour,
    UnknownBehaviour,
    Unreachable,
    UnboundVariable,
    TypeMismatch,
    // facets
    UnknownFacet,
    FacetNameMismatch,
    MissingDependency,
    CyclicDependency,
    DuplicateType,
    DuplicateVar,
    DuplicateModelVar,
    DuplicateBehaviour,
    ExtendsUnknownType,
    UnknownAgentType,
    UnknownVariable,
    InitOrder,
    NestedMatch,
    InvalidRange,
    // policies
    UnknownOp,
    UnknownMode,
    // scenarios and runs
    MissingFlow,
    MissingPopulation,
    InvalidGlobals,
    DuplicateMetric,
    HashMismatch,
    NoSharedMetrics,
    TooFewRuns,
    NotFound,
    Conflict,
    Runtime,
}

impl Code {
    pub fn as_str(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str())
    }
}

/// One finding. `subject` locates it: a node or edge id, a JSON path, a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: Code,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: Code, subject: Option<String>, message: impl Into<String>) -> Self {
        Self { code, subject, message: message.into() }
    }

    pub fn at(code: Code, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(code, Some(subject.into()), message)
    }

    pub fn bare(code: Code, message: impl Into<String>) -> Self {
        Self::new(code, None, message)
    }

    /// Prefixes the subject with a containing location, e.g. a file name.
    pub fn within(mut self, outer: &str) -> Self {
        self.subject = Some(match self.subject {
            Some(s) => format!("{outer}: {s}"),
            None => outer.to_string(),
        });
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            Some(s) => write!(f, "{} [{}]: {}", self.code, s, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn error(&mut self, d: Diagnostic) {
        self.errors.push(d);
    }

    pub fn warn(&mut self, d: Diagnostic) {
        self.warnings.push(d);
    }

    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has_code(&self, code: Code) -> bool {
        self.errors.iter().any(|d| d.code == code)
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
    }

    pub fn merge_within(&mut self, other: ValidationReport, outer: &str) {
        self.errors.extend(other.errors.into_iter().map(|d| d.within(outer)));
        self.warnings.extend(other.warnings.into_iter().map(|d| d.within(outer)));
    }

    /// Converts into `Err(self)` when there is at least one error.
    pub fn into_result(self) -> Result<ValidationReport, ValidationReport> {
        if self.is_ok() {
            Ok(self)
        } else {
            Err(self)
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.errors {
            writeln!(f, "error: {d}")?;
        }
        for d in &self.warnings {
            writeln!(f, "warning: {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

impl From<Diagnostic> for ValidationReport {
    fn from(d: Diagnostic) -> Self {
        Self { errors: vec![d], warnings: Vec::new() }
    }
}
