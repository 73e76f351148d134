use gridnse_web::{estimate_json, estimate_view, graph_json, graph_view, sample_json, sample_view};

#[test]
fn sample_view_lists_every_measurement() {
    let v = sample_view("ieee30", 3).unwrap();
    assert_eq!(v.buses, 30);
    assert_eq!(v.measurements.len(), v.counts.iter().map(|c| c.1).sum::<usize>());
    assert!((v.redundancy - v.measurements.len() as f64 / 60.0).abs() < 1e-12);
    assert_eq!(v.magnitudes.len(), 30);
    // same seed, same sample
    assert_eq!(sample_json("ieee30", 3), sample_json("ieee30", 3));
    assert_ne!(sample_json("ieee30", 3), sample_json("ieee30", 4));
}

#[test]
fn clean_estimate_reproduces_the_label() {
    let v = estimate_view("ieee30", 5, 0.0, 0.0).unwrap();
    assert!(v.converged);
    assert_eq!(v.removed, 0);
    assert_eq!(v.attacked_bus, None);
    assert!(v.mse.unwrap() < 1e-16);
}

#[test]
fn attack_and_exclusion_are_applied() {
    let v = estimate_view("ieee30", 5, 0.5, 2.0).unwrap();
    assert_eq!(v.removed, v.measurements / 2);
    assert!(v.attacked_bus.is_some());
    let heavy = estimate_view("ieee30", 5, 0.95, 0.0).unwrap();
    assert!(!heavy.converged);
    assert!(!heavy.message.is_empty());
}

#[test]
fn subgraph_is_no_larger_than_the_graph() {
    let v = graph_view("ieee30", 2, 7, 2).unwrap();
    assert_eq!(v.plain.variables, 60);
    assert_eq!(v.augmented.variables, 60);
    assert_eq!(v.plain.variable_edges, 0);
    assert!(v.augmented.variable_edges > 0);
    assert_eq!(v.plain.factors, v.augmented.factors);
    assert!(v.augmented_subgraph.buses <= v.augmented.buses);
    assert!(v.plain_subgraph.variables <= v.augmented_subgraph.variables);
    let whole = graph_view("ieee30", 2, 7, 100).unwrap();
    assert_eq!(whole.augmented_subgraph, whole.augmented);
}

#[test]
fn bad_inputs_come_back_as_json_errors() {
    for text in [sample_json("case9", 1), estimate_json("ieee30", 1, 0.99, 0.0), estimate_json("ieee30", 1, 0.0, -1.0), graph_json("ieee30", 1, 99, 1)] {
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["error"].is_string(), "{text}");
    }
}
