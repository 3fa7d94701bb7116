//! GraphML profile.
//!
//! * Node labels come from a `label` data key (`d_label`), falling back to
//!   the text of a yEd `y:NodeLabel` inside a `nodegraphics` data key.
//! * Triggers are JSON in the `d_trigger` data key. When that key is absent
//!   or empty, a node description (`description` key) starting with `{` is
//!   read instead, since yEd keeps descriptions but may drop custom keys.
//! * Nodes without trigger data get the constant trigger 1.
//!
//! [`save_flow`] writes a canonical document carrying the trigger in both
//! keys, so a save/load/save cycle is byte-stable.

use roxmltree::{Document, Node as XmlNode};

use super::{BehaviourFlow, FlowEdge, FlowNode, TriggerSpec};
use crate::diag::{Code, Diagnostic, ValidationReport};
use crate::facet::AgentTypeSchema;

pub const LABEL_KEY: &str = "d_label";
pub const TRIGGER_KEY: &str = "d_trigger";
pub const DESCRIPTION_KEY: &str = "d_description";
const GRAPHICS_KEY: &str = "d_graphics";

#[derive(Default)]
struct Keys {
    label: Vec<String>,
    trigger: Vec<String>,
    description: Vec<String>,
    graphics: Vec<String>,
}

fn elements<'a, 'i>(n: XmlNode<'a, 'i>, name: &'static str) -> impl Iterator<Item = XmlNode<'a, 'i>> {
    n.children().filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn all_text(n: XmlNode) -> String {
    n.descendants().filter(|d| d.is_text()).filter_map(|d| d.text()).collect()
}

fn read_keys(root: XmlNode) -> Keys {
    let mut keys = Keys::default();
    for k in elements(root, "key") {
        let Some(id) = k.attribute("id") else { continue };
        if !matches!(k.attribute("for"), None | Some("node") | Some("all")) {
            continue;
        }
        let attr = k.attribute("attr.name").unwrap_or("").to_ascii_lowercase();
        let id_s = id.to_string();
        if id == TRIGGER_KEY || attr == "trigger" {
            keys.trigger.push(id_s);
        } else if id == LABEL_KEY || attr == "label" {
            keys.label.push(id_s);
        } else if id == DESCRIPTION_KEY || attr == "description" {
            keys.description.push(id_s);
        } else if k.attribute("yfiles.type") == Some("nodegraphics") {
            keys.graphics.push(id_s);
        }
    }
    keys
}

/// Loads a flow from GraphML text. The agent type is taken from the graph id.
pub fn load_flow(document: &str) -> Result<BehaviourFlow, ValidationReport> {
    let doc = Document::parse(document)
        .map_err(|e| ValidationReport::from(Diagnostic::bare(Code::MalformedXml, e.to_string())))?;
    let root = doc.root_element();
    if root.tag_name().name() != "graphml" {
        return Err(Diagnostic::bare(Code::MalformedXml, "root element must be <graphml>").into());
    }
    let keys = read_keys(root);
    let Some(graph) = elements(root, "graph").next() else {
        return Err(Diagnostic::bare(Code::MalformedXml, "document has no <graph> element").into());
    };

    let mut report = ValidationReport::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for child in graph.children().filter(|c| c.is_element()) {
        match child.tag_name().name() {
            "node" => {
                let Some(id) = child.attribute("id") else {
                    report.error(Diagnostic::bare(Code::MalformedXml, "<node> without an id"));
                    continue;
                };
                if elements(child, "graph").next().is_some() {
                    report.error(Diagnostic::at(
                        Code::SchemaViolation,
                        id,
                        "group nodes (nested graphs) are not supported",
                    ));
                    continue;
                }
                let mut label = None;
                let mut graphics_label = None;
                let mut trigger_text = None;
                let mut description = None;
                for d in elements(child, "data") {
                    let key = d.attribute("key").unwrap_or("");
                    if keys.label.iter().any(|k| k == key) {
                        label = Some(all_text(d));
                    } else if keys.trigger.iter().any(|k| k == key) {
                        trigger_text = Some(all_text(d));
                    } else if keys.description.iter().any(|k| k == key) {
                        description = Some(all_text(d));
                    } else if keys.graphics.iter().any(|k| k == key) {
                        graphics_label = d
                            .descendants()
                            .find(|n| n.is_element() && n.tag_name().name() == "NodeLabel")
                            .map(all_text);
                    }
                }
                let label = label
                    .filter(|l| !l.trim().is_empty())
                    .or(graphics_label)
                    .map(|l| l.trim().to_string())
                    .unwrap_or_default();

                let source = trigger_text
                    .filter(|t| !t.trim().is_empty())
                    .or_else(|| description.filter(|t| t.trim_start().starts_with('{')));
                let trigger = match source {
                    None => TriggerSpec::default(),
                    Some(json) => match TriggerSpec::from_json(&json, id) {
                        Ok(t) => t,
                        Err(r) => {
                            report.merge(r);
                            continue;
                        }
                    },
                };
                let mut node = FlowNode { id: id.to_string(), label: label.clone(), behaviour: None, trigger };
                if !label.is_empty() && !node.is_start() {
                    node.behaviour = Some(label);
                }
                nodes.push(node);
            }
            "edge" => {
                let (Some(source), Some(target)) = (child.attribute("source"), child.attribute("target")) else {
                    report.error(Diagnostic::bare(Code::MalformedXml, "<edge> without source or target"));
                    continue;
                };
                let id = child.attribute("id").map(str::to_string).unwrap_or_else(|| format!("e{}", edges.len()));
                edges.push(FlowEdge { id, source: source.into(), target: target.into() });
            }
            _ => {}
        }
    }
    if !report.is_ok() {
        return Err(report);
    }
    BehaviourFlow::new(graph.attribute("id").unwrap_or_default(), nodes, edges)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Writes the canonical GraphML rendering of a flow.
pub fn save_flow(flow: &BehaviourFlow) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n");
    out.push_str(
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\" \
         xmlns:y=\"http://www.yworks.com/xml/graphml\" \
         xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" \
         xsi:schemaLocation=\"http://graphml.graphdrawing.org/xmlns \
         http://www.yworks.com/xml/schema/graphml/1.1/ygraphml.xsd\">\n",
    );
    out.push_str(&format!(
        "  <key for=\"node\" id=\"{LABEL_KEY}\" attr.name=\"label\" attr.type=\"string\"/>\n"
    ));
    out.push_str(&format!(
        "  <key for=\"node\" id=\"{DESCRIPTION_KEY}\" attr.name=\"description\" attr.type=\"string\"/>\n"
    ));
    out.push_str(&format!(
        "  <key for=\"node\" id=\"{TRIGGER_KEY}\" attr.name=\"trigger\" attr.type=\"string\"/>\n"
    ));
    out.push_str(&format!("  <key for=\"node\" id=\"{GRAPHICS_KEY}\" yfiles.type=\"nodegraphics\"/>\n"));
    out.push_str(&format!("  <graph id=\"{}\" edgedefault=\"directed\">\n", escape(&flow.agent_type)));
    for (i, n) in flow.nodes().iter().enumerate() {
        let trigger = escape(&n.trigger.to_json());
        let label = escape(&n.label);
        let width = 40 + 8 * n.label.chars().count();
        out.push_str(&format!("    <node id=\"{}\">\n", escape(&n.id)));
        out.push_str(&format!("      <data key=\"{LABEL_KEY}\">{label}</data>\n"));
        out.push_str(&format!("      <data key=\"{DESCRIPTION_KEY}\">{trigger}</data>\n"));
        out.push_str(&format!("      <data key=\"{TRIGGER_KEY}\">{trigger}</data>\n"));
        out.push_str(&format!(
            "      <data key=\"{GRAPHICS_KEY}\"><y:ShapeNode><y:Geometry height=\"30.0\" width=\"{width}.0\" \
             x=\"0.0\" y=\"{}.0\"/><y:NodeLabel>{label}</y:NodeLabel></y:ShapeNode></data>\n",
            60 * i
        ));
        out.push_str("    </node>\n");
    }
    for e in flow.edges() {
        out.push_str(&format!(
            "    <edge id=\"{}\" source=\"{}\" target=\"{}\"/>\n",
            escape(&e.id),
            escape(&e.source),
            escape(&e.target)
        ));
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

/// A start node plus one unlinked node per behaviour, all with trigger 1.
pub fn emit_skeleton_flow(schema: &AgentTypeSchema) -> String {
    let mut nodes = vec![FlowNode::start("n0")];
    for (i, b) in schema.behaviours.iter().enumerate() {
        nodes.push(FlowNode::behaviour(format!("n{}", i + 1), b.clone(), TriggerSpec::default()));
    }
    let flow = BehaviourFlow::new(schema.name.clone(), nodes, Vec::new()).expect("skeleton ids are unique");
    save_flow(&flow)
}
