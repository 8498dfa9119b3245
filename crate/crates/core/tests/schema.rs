mod common;

use std::collections::{BTreeMap, HashSet};

use promptforge::gateway::parse_frame_response;
use promptforge::schema::{render_label, FrameLabel, LabelForm, LabelTaxonomy, SchemaError, DEFAULT_DELIMITER};
use proptest::prelude::*;
use serde_json::Value;

/// Leaf paths counted by walking the raw document, independent of the loader.
fn walk(node: &Value, depth: usize, path: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    let children = match depth {
        0 => node.get("actors"),
        1 => node.get("reasons"),
        2 => node.get("causes"),
        _ => None,
    };
    match children.and_then(Value::as_array) {
        Some(items) => {
            for item in items {
                let name = match depth {
                    2 => item.as_str().unwrap().to_string(),
                    _ => item["name"].as_str().unwrap().to_string(),
                };
                path.push(name);
                if depth == 2 {
                    out.push(path.clone());
                } else {
                    walk(item, depth + 1, path, out);
                }
                path.pop();
            }
        }
        None => panic!("missing level at depth {depth}"),
    }
}

fn raw_leaves() -> Vec<Vec<String>> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(common::fixture("taxonomy.json")).unwrap()).unwrap();
    let mut out = Vec::new();
    walk(&doc, 0, &mut Vec::new(), &mut out);
    out
}

#[test]
fn fixture_leaf_count_matches_tree_walk() {
    let leaves = raw_leaves();
    let tax = common::taxonomy();
    assert_eq!(tax.size(), leaves.len());
    assert_eq!(tax.size(), 73);
    let enumerated: Vec<Vec<String>> = tax
        .enumerate_labels()
        .iter()
        .map(|l| vec![l.actor.clone(), l.reason.clone(), l.cause.clone()])
        .collect();
    assert_eq!(enumerated, leaves, "depth-first file order");
}

#[test]
fn actor_multiset_matches_subtree_counts() {
    let mut oracle: BTreeMap<String, usize> = BTreeMap::new();
    for leaf in raw_leaves() {
        *oracle.entry(leaf[0].clone()).or_default() += 1;
    }
    let mut counted: BTreeMap<String, usize> = BTreeMap::new();
    for l in common::taxonomy().enumerate_labels() {
        *counted.entry(l.actor.clone()).or_default() += 1;
    }
    assert_eq!(counted, oracle);
}

#[test]
fn quoted_label_is_valid_and_parses() {
    let tax = common::taxonomy();
    let l = tax.parse_label_string("Shop – Thay đổi thông tin – Thời gian lấy hàng").unwrap();
    assert_eq!(l, FrameLabel::new("Shop", "Thay đổi thông tin", "Thời gian lấy hàng"));
    assert!(tax.validate_label(&l));
}

#[test]
fn wrong_arity_reports_count() {
    let tax = common::taxonomy();
    match tax.parse_label_string("A – B") {
        Err(SchemaError::Arity { count }) => assert_eq!(count, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_cause_is_invalid() {
    let tax = common::taxonomy();
    assert!(!tax.validate_label(&FrameLabel::new("Customer", "Unavailable", "")));
    assert!(render_label(&FrameLabel::new("Customer", "Unavailable", ""), LabelForm::Tuple, DEFAULT_DELIMITER).is_err());
}

#[test]
fn empty_file_is_a_format_error() {
    assert!(matches!(LabelTaxonomy::from_json(""), Err(SchemaError::Format { .. })));
}

#[test]
fn duplicate_and_size_errors() {
    let dup = r#"{"size": 2, "actors": [{"name": "A", "reasons": [{"name": "B", "causes": ["C", "C"]}]}]}"#;
    assert!(matches!(LabelTaxonomy::from_json(dup), Err(SchemaError::DuplicatePath(_))));
    let short = r#"{"size": 3, "actors": [{"name": "A", "reasons": [{"name": "B", "causes": ["C", "D"]}]}]}"#;
    assert!(matches!(
        LabelTaxonomy::from_json(short),
        Err(SchemaError::SizeMismatch { declared: 3, counted: 2 })
    ));
}

#[test]
fn tuple_rendering() {
    let l = FrameLabel::new("Customer", "Refused Delivery", "Late Delivery");
    assert_eq!(
        render_label(&l, LabelForm::Tuple, DEFAULT_DELIMITER).unwrap(),
        r#"("Customer", "Refused Delivery", "Late Delivery")"#
    );
}

#[test]
fn single_path_taxonomy() {
    let tax = LabelTaxonomy::from_json(r#"{"size": 1, "actors": [{"name": "A", "reasons": [{"name": "B", "causes": ["C"]}]}]}"#).unwrap();
    assert_eq!(tax.enumerate_labels(), &[FrameLabel::new("A", "B", "C")]);
}

#[test]
fn every_label_round_trips_in_every_form() {
    let tax = common::taxonomy();
    for l in tax.enumerate_labels() {
        for form in LabelForm::ALL {
            let text = tax.render(l, form).unwrap();
            let back = match form {
                LabelForm::Flat => tax.parse_label_string(&text).unwrap(),
                _ => parse_frame_response(&text, &tax).unwrap(),
            };
            assert_eq!(&back, l, "{form:?}");
            assert_eq!(&parse_frame_response(&format!("Final Output: {}", tax.render(l, LabelForm::Flat).unwrap()), &tax).unwrap(), l);
        }
    }
}

fn label_parts() -> impl Strategy<Value = (String, String, String)> {
    let names = ["Customer", "Shop", "Refused Delivery", "Unavailable", "On Vacation", "Late Delivery", "Nope", "Stock Issue"];
    let pick = proptest::sample::select(names.to_vec()).prop_map(str::to_string);
    (pick.clone(), pick.clone(), pick)
}

proptest! {
    #[test]
    fn validity_is_enumeration_membership((a, r, c) in label_parts()) {
        let tax = common::taxonomy();
        let l = FrameLabel::new(&a, &r, &c);
        let members: HashSet<&FrameLabel> = tax.enumerate_labels().iter().collect();
        prop_assert_eq!(tax.validate_label(&l), members.contains(&l));
    }

    #[test]
    fn parsed_labels_are_always_valid(text in "[A-Za-z ]{0,12}( – [A-Za-z ]{0,12}){0,3}") {
        let tax = common::taxonomy();
        if let Ok(l) = tax.parse_label_string(&text) {
            prop_assert!(tax.validate_label(&l));
        }
    }

    #[test]
    fn enumerated_labels_are_valid(i in 0usize..73) {
        let tax = common::taxonomy();
        prop_assert_eq!(tax.enumerate_labels().len(), tax.size());
        prop_assert!(tax.validate_label(&tax.enumerate_labels()[i]));
    }
}
