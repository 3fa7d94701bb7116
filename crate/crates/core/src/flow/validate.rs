use std::collections::BTreeSet;

use super::BehaviourFlow;
use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::expr::Kind;
use crate::facet::{type_diag, AgentTypeSchema};

/// Checks a flow against the agent type it drives. Structural problems and
/// ill-typed triggers are errors; nodes unreachable from start are warnings.
pub fn validate_flow(flow: &BehaviourFlow, schema: &AgentTypeSchema) -> ValidationReport {
    let mut report = ValidationReport::new();
    let starts = flow.start_nodes();
    match starts.as_slice() {
        [] => report.error(Diagnostic::bare(Code::NoStart, "flow has no start node")),
        [s] => {
            if !flow.parents(*s).is_empty() {
                report.error(Diagnostic::at(
                    Code::StartHasParent,
                    flow.node(*s).id.clone(),
                    "the start node has incoming edges",
                ));
            }
        }
        many => report.error(Diagnostic::bare(
            Code::MultipleStart,
            format!(
                "flow has {} start nodes: {}",
                many.len(),
                many.iter().map(|&i| flow.node(i).id.as_str()).collect::<Vec<_>>().join(", ")
            ),
        )),
    }

    let mut seen = BTreeSet::new();
    for e in flow.edges() {
        if !seen.insert((e.source.as_str(), e.target.as_str())) {
            report.error(Diagnostic::at(
                Code::DuplicateEdge,
                e.id.clone(),
                format!("second edge {} -> {}", e.source, e.target),
            ));
        }
    }

    if let Some(cycle) = find_cycle(flow) {
        let path: Vec<&str> = cycle.iter().map(|&i| flow.node(i).id.as_str()).collect();
        report.error(Diagnostic::at(
            Code::Cycle,
            path[0],
            format!("cycle {}", path.join(" -> ")),
        ));
    }

    let env = |v: &crate::expr::VarRef| schema.kind_of(v);
    for n in flow.nodes() {
        if !n.is_start() {
            match &n.behaviour {
                None => report.error(Diagnostic::at(Code::MissingBehaviour, n.id.clone(), "node has no behaviour label")),
                Some(b) if !schema.has_behaviour(b) => report.error(Diagnostic::at(
                    Code::UnknownBehaviour,
                    n.id.clone(),
                    format!("{} has no behaviour `{b}`", schema.name),
                )),
                Some(_) => {}
            }
        }
        for (label, expr, criterion) in n.trigger.expressions() {
            let want = if criterion { Kind::Boolean } else { Kind::Number };
            if let Err(e) = expr.check_kind(want, &env) {
                report.error(type_diag(e, format!("{}: {label}", n.id)));
            }
        }
    }

    if let [start] = starts.as_slice() {
        let mut reached = vec![false; flow.nodes().len()];
        let mut stack = vec![*start];
        reached[*start] = true;
        while let Some(i) = stack.pop() {
            for &c in flow.children(i) {
                if !reached[c] {
                    reached[c] = true;
                    stack.push(c);
                }
            }
        }
        for (i, r) in reached.iter().enumerate() {
            if !r {
                report.warn(Diagnostic::at(Code::Unreachable, flow.node(i).id.clone(), "not reachable from start"));
            }
        }
    }
    report
}

/// Some cycle as a closed node path (first node repeated at the end).
fn find_cycle(flow: &BehaviourFlow) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = flow.nodes().len();
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // (node, next child position)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
            if let Some(&c) = flow.children(node).get(*pos) {
                *pos += 1;
                match mark[c] {
                    Mark::New => {
                        mark[c] = Mark::Active;
                        stack.push((c, 0));
                    }
                    Mark::Active => {
                        let from = stack.iter().position(|&(s, _)| s == c).expect("active nodes are on the stack");
                        let mut path: Vec<usize> = stack[from..].iter().map(|&(s, _)| s).collect();
                        path.push(c);
                        return Some(path);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}
