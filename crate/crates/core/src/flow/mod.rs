//! Behaviour flows: per-agent-type DAGs of behaviour nodes with triggers,
//! stored as yEd-compatible GraphML.

mod graphml;
mod trigger;
mod validate;

use std::collections::BTreeMap;

pub use graphml::{emit_skeleton_flow, load_flow, save_flow, DESCRIPTION_KEY, LABEL_KEY, TRIGGER_KEY};
pub use trigger::{evaluate_trigger, TriggerError, TriggerRule, TriggerSpec, TriggerValue};
pub use validate::validate_flow;

use crate::diag::{Code, Diagnostic, ValidationReport};

/// Label that marks the start node (compared case-insensitively).
pub const START_LABEL: &str = "start";

#[derive(Debug, Clone, PartialEq)]
pub struct FlowNode {
    pub id: String,
    /// Label as written in the document.
    pub label: String,
    /// Behaviour to execute; `None` on the start node or an unlabelled node.
    pub behaviour: Option<String>,
    pub trigger: TriggerSpec,
}

impl FlowNode {
    pub fn is_start(&self) -> bool {
        self.label.trim().eq_ignore_ascii_case(START_LABEL)
    }

    pub fn start(id: impl Into<String>) -> Self {
        Self { id: id.into(), label: START_LABEL.into(), behaviour: None, trigger: TriggerSpec::default() }
    }

    pub fn behaviour(id: impl Into<String>, behaviour: impl Into<String>, trigger: TriggerSpec) -> Self {
        let behaviour = behaviour.into();
        Self { id: id.into(), label: behaviour.clone(), behaviour: Some(behaviour), trigger }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEdge {
    pub id: String,
    pub source: String,
    pub target: String,
}

/// A loaded flow. Node and edge order follow the source document; children
/// of a node are listed in edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviourFlow {
    pub agent_type: String,
    nodes: Vec<FlowNode>,
    edges: Vec<FlowEdge>,
    index: BTreeMap<String, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
}

impl BehaviourFlow {
    /// Builds a flow; node ids must be unique and edges must name known nodes.
    pub fn new(
        agent_type: impl Into<String>,
        nodes: Vec<FlowNode>,
        edges: Vec<FlowEdge>,
    ) -> Result<Self, ValidationReport> {
        let mut report = ValidationReport::new();
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                report.error(Diagnostic::at(Code::DuplicateNode, n.id.clone(), "duplicate node id"));
            }
        }
        let mut children = vec![Vec::new(); nodes.len()];
        let mut parents = vec![Vec::new(); nodes.len()];
        for e in &edges {
            match (index.get(&e.source), index.get(&e.target)) {
                (Some(&s), Some(&t)) => {
                    children[s].push(t);
                    parents[t].push(s);
                }
                _ => report.error(Diagnostic::at(
                    Code::UnknownNode,
                    e.id.clone(),
                    format!("edge {} -> {} names an unknown node", e.source, e.target),
                )),
            }
        }
        if !report.is_ok() {
            return Err(report);
        }
        Ok(Self { agent_type: agent_type.into(), nodes, edges, index, children, parents })
    }

    pub fn nodes(&self) -> &[FlowNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[FlowEdge] {
        &self.edges
    }

    pub fn node(&self, idx: usize) -> &FlowNode {
        &self.nodes[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn parents(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    pub fn start_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_start()).collect()
    }

    /// The start node, when there is exactly one.
    pub fn start(&self) -> Option<usize> {
        match self.start_nodes().as_slice() {
            [s] => Some(*s),
            _ => None,
        }
    }

    /// Same ids, labels, triggers and edges (edge ids ignored).
    pub fn isomorphic(&self, other: &BehaviourFlow) -> bool {
        let ends = |f: &BehaviourFlow| -> Vec<(String, String)> {
            f.edges.iter().map(|e| (e.source.clone(), e.target.clone())).collect()
        };
        self.nodes == other.nodes && ends(self) == ends(other)
    }
}
