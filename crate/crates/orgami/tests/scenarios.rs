use std::path::{Path, PathBuf};

use orgami::scenario::{load_scenario, parse_scenario, Experiment, LoadError, ProfileSpec};

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn memory_flow_text() -> String {
    std::fs::read_to_string(scenario_dir().join("fig4.json")).unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("orgami-scn-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn violations(text: &str) -> Vec<String> {
    match parse_scenario(text, Path::new(".")) {
        Err(LoadError::Validation { violations, .. }) => {
            violations.iter().map(|v| v.to_string()).collect()
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn every_bundled_scenario_loads() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        load_scenario(&path).unwrap_or_else(|e| panic!("{e}"));
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn memory_flow_has_three_rules_and_one_driver() {
    let s = load_scenario(scenario_dir().join("fig4.json")).unwrap();
    let rules = s
        .cells
        .iter()
        .flat_map(|c| c.resources.keys())
        .filter(|k| k.starts_with("A/"))
        .count();
    assert_eq!(rules, 3);
    assert_eq!(s.drivers.len(), 1);
    assert_eq!(s.experiment.kind(), "flow");
}

#[test]
fn unknown_field_is_named() {
    let text = memory_flow_text().replacen("\"seed\": 1,", "\"seed\": 1, \"bogus\": true,", 1);
    let v = violations(&text);
    assert!(v.iter().any(|m| m.contains("bogus")), "{v:?}");
}

#[test]
fn empty_file_is_a_parse_error() {
    assert!(matches!(
        parse_scenario("", Path::new(".")),
        Err(LoadError::Parse { .. })
    ));
}

#[test]
fn all_violations_are_reported() {
    let text = memory_flow_text()
        .replacen("\"seed\": 1,", "\"seed\": -1,", 1)
        .replacen("\"delay\": 1", "\"delay\": \"one\"", 1);
    let v = violations(&text);
    assert!(v.len() >= 2, "{v:?}");
}

#[test]
fn bad_rule_text_is_rejected() {
    let text = memory_flow_text().replacen("IF true THEN", "IF true THEM", 1);
    let v = violations(&text);
    assert!(v.iter().any(|m| m.contains("A/t1")), "{v:?}");
}

#[test]
fn cell_outside_topology_is_rejected() {
    let text = memory_flow_text().replacen("\"id\": \"nB\"", "\"id\": \"nC\"", 1);
    let v = violations(&text);
    assert!(v.iter().any(|m| m.contains("nC")), "{v:?}");
}

#[test]
fn csv_profile_resolves_relative_to_the_scenario() {
    let dir = scratch("csv");
    std::fs::write(
        dir.join("p.csv"),
        "a,b,c\n0.5,0.3,0.2\n0.1,0.6,0.3\n0.2,0.2,0.6\n",
    )
    .unwrap();
    let text = r#"{
      "name": "csv",
      "topology": { "kind": "ring", "n": 3 },
      "experiment": { "vote": { "profile": { "csv": "p.csv" } } }
    }"#;
    let path = dir.join("s.json");
    std::fs::write(&path, text).unwrap();
    let s = load_scenario(&path).unwrap();
    let Experiment::Vote(v) = &s.experiment else {
        panic!("not a vote")
    };
    let ProfileSpec::Rows(rows) = &v.profile else {
        panic!("profile not resolved")
    };
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1], vec![0.1, 0.6, 0.3]);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(
        load_scenario("/nonexistent/orgami.json"),
        Err(LoadError::Io { .. })
    ));
}
