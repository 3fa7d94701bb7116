use std::collections::BTreeMap;

use facetflow::diag::Code;
use facetflow::facet::{compose, parse_manifest, resolve_dependencies, CompositeModelSpec, FacetManifest};
use proptest::prelude::*;
use serde_json::json;

/// `Core` creates types A and B plus `model.rate`.
fn core() -> FacetManifest {
    parse_manifest(
        &json!({"name": "Core",
            "agent_types": [{"name": "A", "creates_type": true}, {"name": "B", "creates_type": true}],
            "model_vars": [{"name": "rate", "kind": "number", "init": 2}]})
        .to_string(),
    )
    .unwrap()
}

/// Shape of one independent facet: variables per extended type, whether it
/// creates a type of its own, and whether it adds a model variable.
#[derive(Debug, Clone)]
struct Shape {
    on_a: usize,
    on_b: usize,
    own_type: bool,
    model_var: bool,
}

fn shape() -> impl Strategy<Value = Shape> {
    (0usize..3, 0usize..3, any::<bool>(), any::<bool>())
        .prop_map(|(on_a, on_b, own_type, model_var)| Shape { on_a, on_b, own_type, model_var })
}

/// A facet depending only on Core; every name it declares carries its
/// index, so facets built from distinct indices never clash.
fn facet(i: usize, s: &Shape, extra_on_a: Option<&str>) -> FacetManifest {
    let vars = |t: &str, n: usize| -> Vec<serde_json::Value> {
        (0..n)
            .map(|j| json!({"name": format!("f{i}_{t}{j}"), "kind": "number", "init": format!("model.rate * {j}")}))
            .collect()
    };
    let behaviours = |t: &str, n: usize| -> Vec<serde_json::Value> {
        (0..n)
            .map(|j| json!({"name": format!("f{i}-{t}{j}"), "actions": [{"op": "add", "var": format!("f{i}_{t}{j}"), "value": 1}]}))
            .collect()
    };
    let mut a_vars = vars("a", s.on_a);
    if let Some(v) = extra_on_a {
        a_vars.push(json!({"name": v, "kind": "boolean", "init": false}));
    }
    let mut types = vec![
        json!({"name": "A", "state_vars": a_vars, "behaviours": behaviours("a", s.on_a)}),
        json!({"name": "B", "state_vars": vars("b", s.on_b), "behaviours": behaviours("b", s.on_b)}),
    ];
    if s.own_type {
        types.push(json!({"name": format!("T{i}"), "creates_type": true, "state_vars": vars("t", 1)}));
    }
    let model_vars: Vec<_> =
        if s.model_var { vec![json!({"name": format!("f{i}_m"), "kind": "number", "init": "model.rate + 1"})] } else { vec![] };
    parse_manifest(
        &json!({"name": format!("F{i}"), "depends_on": ["Core"], "agent_types": types, "model_vars": model_vars})
            .to_string(),
    )
    .unwrap()
}

fn facets_and_permutation() -> impl Strategy<Value = (Vec<Shape>, Vec<usize>)> {
    prop::collection::vec(shape(), 2..7).prop_flat_map(|shapes| {
        let n = shapes.len();
        (Just(shapes), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

fn with_core(fs: impl IntoIterator<Item = FacetManifest>) -> Vec<FacetManifest> {
    std::iter::once(core()).chain(fs).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn permuting_independent_facets_gives_equal_composites((shapes, perm) in facets_and_permutation()) {
        let fs: Vec<_> = shapes.iter().enumerate().map(|(i, s)| facet(i, s, None)).collect();
        let base = CompositeModelSpec::base();
        let a = compose(&base, &with_core(fs.clone())).unwrap();
        let b = compose(&base, &with_core(perm.iter().map(|&i| fs[i].clone()))).unwrap();
        prop_assert_eq!(&a, &b);

        // composing in two steps matches composing at once
        let first = compose(&base, &[core(), fs[0].clone()]).unwrap();
        let stepped = compose(&first, &fs[1..]).unwrap();
        prop_assert_eq!(&stepped, &a);

        // one provenance entry per declared item
        let declared: usize = 1 + 2 + 1 // base tick, A, B, model.rate
            + shapes.iter().map(|s| 2 * (s.on_a + s.on_b) + if s.own_type { 2 } else { 0 } + usize::from(s.model_var)).sum::<usize>();
        let prov = a.provenance();
        prop_assert_eq!(prov.len(), declared);
        for (i, s) in shapes.iter().enumerate() {
            let mine = prov.values().filter(|f| **f == format!("F{i}")).count();
            prop_assert_eq!(mine, 2 * (s.on_a + s.on_b) + if s.own_type { 2 } else { 0 } + usize::from(s.model_var));
        }
    }

    #[test]
    fn clashing_variable_names_both_facets((shapes, perm) in facets_and_permutation()) {
        let (i, j) = (perm[0], perm[1]);
        let fs: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(k, s)| facet(k, s, (k == i || k == j).then_some("clash")))
            .collect();
        let err = compose(&CompositeModelSpec::base(), &with_core(perm.iter().map(|&k| fs[k].clone()))).unwrap_err();
        prop_assert_eq!(err.errors.len(), 1, "{}", err);
        let d = &err.errors[0];
        prop_assert_eq!(d.code, Code::DuplicateVar);
        prop_assert!(d.message.contains(&format!("F{i}")) && d.message.contains(&format!("F{j}")), "{}", d);
        prop_assert_eq!(d.subject.as_deref(), Some("A.clash"));
    }

    #[test]
    fn resolved_order_respects_dependencies((edges, selected) in dag_and_selection()) {
        // facet i may depend on any j < i
        let mut available = BTreeMap::new();
        for (i, row) in edges.iter().enumerate() {
            let deps: Vec<String> = row.iter().take(i).enumerate().filter(|(_, &e)| e).map(|(j, _)| format!("G{j}")).collect();
            let m = parse_manifest(&json!({"name": format!("G{i}"), "depends_on": deps}).to_string()).unwrap();
            available.insert(format!("G{i}"), m);
        }
        let selected: Vec<String> = selected.iter().map(|i| format!("G{i}")).collect();
        let out = resolve_dependencies(&selected, &available).unwrap();
        prop_assert_eq!(out.len(), edges.len());
        let pos: BTreeMap<&String, usize> = out.iter().enumerate().map(|(p, f)| (f, p)).collect();
        for f in &out {
            for d in &available[f].depends_on {
                prop_assert!(pos[d] < pos[f], "{} before {}: {:?}", d, f, out);
            }
        }
    }
}

fn dag_and_selection() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<usize>)> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), 8), 1..9).prop_flat_map(|edges| {
        let n = edges.len();
        (Just(edges), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}
