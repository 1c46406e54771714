use kinoplan::api;
use serde_json::Value;

const STRAIGHT_TASK: &str = r#"{"quads": [[[-5, -4], [60, -4], [60, 4], [-5, 4]]], "q0": [0, 0, 0], "qd": [45, 0, 0]}"#;

#[test]
fn lattice_plan_validates() {
    let out: Value = serde_json::from_str(&api::plan(STRAIGHT_TASK, "lattice", None, 0, None).unwrap()).unwrap();
    assert_eq!(out["status"], "feasible");
    let report: Value = serde_json::from_str(&api::validate(&out["path"].to_string(), STRAIGHT_TASK).unwrap()).unwrap();
    assert_eq!(report["accepted"], true);
    assert!((out["length"].as_f64().unwrap() - 45.0).abs() < 1e-6);
}

#[test]
fn neural_needs_a_model() {
    assert!(api::plan(STRAIGHT_TASK, "neural", None, 0, None).unwrap_err().contains("model"));
    assert!(api::plan(STRAIGHT_TASK, "bfs", None, 0, None).is_err());
    assert!(api::plan("{}", "lattice", None, 0, None).unwrap_err().starts_with("task"));
}

#[test]
fn dataset_lines_carry_splits() {
    let text = api::generate_dataset([2, 1, 1], 3, Some(vec!["overtaking".into()])).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["meta"]["seed"], 3);
    assert_eq!(lines.iter().filter(|l| l["split"] == "train").count(), 2);
    assert!(api::generate_dataset([1, 0, 0], 3, Some(vec!["roundabout".into()])).is_err());
}

#[test]
fn dubins_straight() {
    assert!((api::dubins_length([0.0, 0.0, 0.0], [7.0, 0.0, 0.0], None).unwrap() - 7.0).abs() < 1e-12);
    assert!(api::dubins_length([0.0, 0.0, 0.0], [7.0, 0.0, 0.0], Some(0.0)).is_err());
}
