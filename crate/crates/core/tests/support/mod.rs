//! Shared fixtures: a random expression generator, an independent reference
//! interpreter, and small single-type models for traversal experiments.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use facetflow::expr::{BinaryOp, EvalContext, Function, Node, UnaryOp, VarRef};
use facetflow::facet::{compose, parse_manifest, CompositeModelSpec};
use facetflow::flow::{BehaviourFlow, FlowEdge, FlowNode, TriggerSpec};
use facetflow::sim::{initialize_run, ModelState, RunSetup};
use rand::Rng;

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

// ---------------------------------------------------------------------------
// expression generation

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Want {
    Num,
    Bool,
    Text,
}

const LITERALS: [f64; 10] = [0.0, 0.5, 1.0, 2.0, 3.0, 2.25, 7.0, 10.0, 0.001, 1000.0];
const TEXTS: [&str; 5] = ["", "a", "restricted", "say \"hi\"", "back\\slash"];

/// Random tree of (mostly) the wanted kind with `depth() <= max_depth`.
/// About one subtree in twenty has the wrong kind or an unbound variable,
/// so error paths are exercised too.
pub fn gen_node(rng: &mut impl Rng, want: Want, max_depth: usize) -> Node {
    if max_depth > 1 && rng.gen_bool(0.05) {
        let other = [Want::Num, Want::Bool, Want::Text][rng.gen_range(0..3)];
        return gen_node(rng, other, max_depth - 1);
    }
    if max_depth <= 1 || rng.gen_bool(0.25) {
        return leaf(rng, want);
    }
    let d = max_depth - 1;
    match want {
        Want::Num => match rng.gen_range(0..10) {
            0 => Node::unary(UnaryOp::Neg, gen_node(rng, Want::Num, d)),
            1..=5 => {
                let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Rem][rng.gen_range(0..5)];
                Node::binary(op, gen_node(rng, Want::Num, d), gen_node(rng, Want::Num, d))
            }
            6 => Node::cond(gen_node(rng, Want::Bool, d), gen_node(rng, Want::Num, d), gen_node(rng, Want::Num, d)),
            _ => {
                let f = Function::ALL[rng.gen_range(0..Function::ALL.len())];
                Node::Call(f, (0..f.arity()).map(|_| gen_node(rng, Want::Num, d)).collect())
            }
        },
        Want::Bool => match rng.gen_range(0..10) {
            0 => Node::unary(UnaryOp::Not, gen_node(rng, Want::Bool, d)),
            1 | 2 => {
                let op = if rng.gen() { BinaryOp::And } else { BinaryOp::Or };
                Node::binary(op, gen_node(rng, Want::Bool, d), gen_node(rng, Want::Bool, d))
            }
            3..=6 => {
                let ops = [BinaryOp::Lt, BinaryOp::Le, BinaryOp::Gt, BinaryOp::Ge, BinaryOp::Eq, BinaryOp::Ne];
                Node::binary(ops[rng.gen_range(0..6)], gen_node(rng, Want::Num, d), gen_node(rng, Want::Num, d))
            }
            7 => {
                let op = if rng.gen() { BinaryOp::Eq } else { BinaryOp::Ne };
                let k = if rng.gen() { Want::Bool } else { Want::Text };
                Node::binary(op, gen_node(rng, k, d), gen_node(rng, k, d))
            }
            _ => Node::cond(gen_node(rng, Want::Bool, d), gen_node(rng, Want::Bool, d), gen_node(rng, Want::Bool, d)),
        },
        Want::Text => {
            Node::cond(gen_node(rng, Want::Bool, d), gen_node(rng, Want::Text, d), gen_node(rng, Want::Text, d))
        }
    }
}

fn leaf(rng: &mut impl Rng, want: Want) -> Node {
    if rng.gen_bool(0.02) {
        return Node::Var(VarRef::agent("missing"));
    }
    match want {
        Want::Num => match rng.gen_range(0..6) {
            0 => Node::Var(VarRef::agent("x")),
            1 => Node::Var(VarRef::agent("y")),
            2 => Node::Var(VarRef::model("m")),
            _ => Node::Number(LITERALS[rng.gen_range(0..LITERALS.len())]),
        },
        Want::Bool => match rng.gen_range(0..3) {
            0 => Node::Var(VarRef::agent("flag")),
            _ => Node::Bool(rng.gen()),
        },
        Want::Text => match rng.gen_range(0..3) {
            0 => Node::Var(VarRef::agent("visa")),
            _ => Node::Text(TEXTS[rng.gen_range(0..TEXTS.len())].into()),
        },
    }
}

pub fn gen_context(rng: &mut impl Rng) -> EvalContext {
    let num = |rng: &mut dyn rand::RngCore| -> f64 {
        match rng.gen_range(0..4) {
            0 => 0.0,
            1 => rng.gen_range(-5i32..=5) as f64,
            _ => rng.gen_range(-100.0..100.0),
        }
    };
    EvalContext::new()
        .with_agent("x", num(rng))
        .with_agent("y", num(rng))
        .with_model("m", num(rng))
        .with_agent("flag", rng.gen::<bool>())
        .with_agent("visa", TEXTS[rng.gen_range(0..TEXTS.len())])
}

// ---------------------------------------------------------------------------
// reference interpreter

/// Reference result: `None` for any evaluation error.
#[derive(Debug, Clone, PartialEq)]
pub enum RefValue {
    N(f64),
    B(bool),
    T(String),
}

pub struct RefEnv {
    pub vars: BTreeMap<String, RefValue>,
}

impl RefEnv {
    pub fn from_context(ctx: &EvalContext) -> Self {
        use facetflow::expr::Value;
        let conv = |v: &Value| match v {
            Value::Number(n) => RefValue::N(*n),
            Value::Bool(b) => RefValue::B(*b),
            Value::Text(t) => RefValue::T(t.to_string()),
        };
        let mut vars = BTreeMap::new();
        for (k, v) in &ctx.agent_vars {
            vars.insert(format!("agent.{k}"), conv(v));
        }
        for (k, v) in &ctx.model_vars {
            vars.insert(format!("model.{k}"), conv(v));
        }
        RefEnv { vars }
    }
}

fn ok_num(v: f64) -> Option<RefValue> {
    v.is_finite().then_some(RefValue::N(v))
}

/// Written from the language description alone: `and`, `or` and `if`
/// evaluate lazily, every other form evaluates all operands left to right,
/// arithmetic must stay finite, division and remainder by zero fail, `%`
/// keeps the sign of the dividend, equality needs operands of one kind.
pub fn ref_eval(node: &Node, env: &RefEnv) -> Option<RefValue> {
    let num = |n: &Node| match ref_eval(n, env)? {
        RefValue::N(v) => Some(v),
        _ => None,
    };
    let boolean = |n: &Node| match ref_eval(n, env)? {
        RefValue::B(b) => Some(b),
        _ => None,
    };
    match node {
        Node::Number(v) => Some(RefValue::N(*v)),
        Node::Bool(b) => Some(RefValue::B(*b)),
        Node::Text(t) => Some(RefValue::T(t.to_string())),
        Node::Var(v) => env.vars.get(&v.to_string()).cloned(),
        Node::Unary(UnaryOp::Neg, a) => ok_num(-num(a)?),
        Node::Unary(UnaryOp::Not, a) => Some(RefValue::B(!boolean(a)?)),
        Node::Binary(BinaryOp::And, a, b) => Some(RefValue::B(boolean(a)? && boolean(b)?)),
        Node::Binary(BinaryOp::Or, a, b) => Some(RefValue::B(boolean(a)? || boolean(b)?)),
        Node::Binary(op @ (BinaryOp::Eq | BinaryOp::Ne), a, b) => {
            let same = match (ref_eval(a, env)?, ref_eval(b, env)?) {
                (RefValue::N(x), RefValue::N(y)) => x == y,
                (RefValue::B(x), RefValue::B(y)) => x == y,
                (RefValue::T(x), RefValue::T(y)) => x == y,
                _ => return None,
            };
            Some(RefValue::B(same == (*op == BinaryOp::Eq)))
        }
        Node::Binary(op, a, b) => {
            let x = num(a)?;
            let y = num(b)?;
            match op {
                BinaryOp::Add => ok_num(x + y),
                BinaryOp::Sub => ok_num(x - y),
                BinaryOp::Mul => ok_num(x * y),
                BinaryOp::Div => (y != 0.0).then(|| ok_num(x / y)).flatten(),
                // f64 `%` is the exact truncated remainder (sign of x)
                BinaryOp::Rem => (y != 0.0).then(|| ok_num(x % y)).flatten(),
                BinaryOp::Lt => Some(RefValue::B(x < y)),
                BinaryOp::Le => Some(RefValue::B(x <= y)),
                BinaryOp::Gt => Some(RefValue::B(x > y)),
                BinaryOp::Ge => Some(RefValue::B(x >= y)),
                _ => unreachable!("handled above"),
            }
        }
        Node::If(c, a, b) => {
            if boolean(c)? {
                ref_eval(a, env)
            } else {
                ref_eval(b, env)
            }
        }
        Node::Call(f, args) => {
            let mut v = Vec::new();
            for a in args {
                v.push(num(a)?);
            }
            let r = match f {
                Function::Min => if v[1] < v[0] { v[1] } else { v[0] },
                Function::Max => if v[1] > v[0] { v[1] } else { v[0] },
                Function::Clamp => {
                    if v[1] > v[2] {
                        return None;
                    }
                    v[0].max(v[1]).min(v[2])
                }
                Function::Abs => v[0].abs(),
                Function::Floor => v[0].floor(),
                Function::Ceil => v[0].ceil(),
            };
            ok_num(r)
        }
    }
}

/// Distance in units in the last place; 0 for equal values (including ±0).
pub fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |v: f64| {
        let bits = v.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

/// Compares the engine's evaluation with the reference result.
pub fn agrees(main: &Result<facetflow::expr::Value, facetflow::expr::EvalError>, reference: &Option<RefValue>) -> bool {
    use facetflow::expr::Value;
    match (main, reference) {
        (Err(_), None) => true,
        (Ok(Value::Number(a)), Some(RefValue::N(b))) => ulps(*a, *b) <= 1,
        (Ok(Value::Bool(a)), Some(RefValue::B(b))) => a == b,
        (Ok(Value::Text(a)), Some(RefValue::T(b))) => **a == **b,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// single-type models

/// One agent type `P` with numbers `x` and `y`, boolean `licensed` and one behaviour
/// per name, each adding 1 to `x`. `license` additionally sets `licensed`.
pub fn p_model(behaviours: &[&str]) -> Arc<CompositeModelSpec> {
    let defs: Vec<serde_json::Value> = behaviours
        .iter()
        .map(|b| {
            let mut actions = vec![serde_json::json!({"op": "add", "var": "x", "value": 1})];
            if *b == "license" {
                actions.push(serde_json::json!({"op": "set", "var": "licensed", "value": "true"}));
            }
            serde_json::json!({"name": b, "actions": actions})
        })
        .collect();
    let doc = serde_json::json!({"name": "PFacet", "agent_types": [{"name": "P", "creates_type": true,
        "state_vars": [{"name": "x", "kind": "number", "init": 0},
                       {"name": "y", "kind": "number", "init": 0},
                       {"name": "licensed", "kind": "boolean", "init": false}],
        "behaviours": defs}]});
    let m = parse_manifest(&doc.to_string()).expect("fixture facet parses");
    Arc::new(compose(&CompositeModelSpec::base(), &[m]).expect("fixture facet composes"))
}

/// `start -> children` with the given triggers; node ids are the behaviour names.
pub fn fan_flow(children: &[(&str, TriggerSpec)]) -> BehaviourFlow {
    let mut nodes = vec![FlowNode::start("s")];
    let mut edges = Vec::new();
    for (i, (b, t)) in children.iter().enumerate() {
        nodes.push(FlowNode::behaviour(*b, *b, t.clone()));
        edges.push(FlowEdge { id: format!("e{i}"), source: "s".into(), target: (*b).into() });
    }
    BehaviourFlow::new("P", nodes, edges).expect("fixture flow")
}

/// `start -> a -> b -> ...` chain.
pub fn chain_flow(steps: &[(&str, TriggerSpec)]) -> BehaviourFlow {
    let mut nodes = vec![FlowNode::start("s")];
    let mut edges = Vec::new();
    let mut prev = "s".to_string();
    for (i, (b, t)) in steps.iter().enumerate() {
        nodes.push(FlowNode::behaviour(*b, *b, t.clone()));
        edges.push(FlowEdge { id: format!("e{i}"), source: prev.clone(), target: (*b).into() });
        prev = (*b).into();
    }
    BehaviourFlow::new("P", nodes, edges).expect("fixture flow")
}

pub fn state(spec: Arc<CompositeModelSpec>, flow: BehaviourFlow, agents: u64, iterations: u64, seed: u64) -> ModelState {
    let mut setup = RunSetup::new(iterations, seed);
    setup.populations.insert("P".into(), agents);
    setup.flows.insert("P".into(), flow);
    initialize_run(spec, setup).expect("fixture run initializes")
}

pub fn trigger(json: &str) -> TriggerSpec {
    TriggerSpec::from_json(json, "fixture").expect("fixture trigger")
}
