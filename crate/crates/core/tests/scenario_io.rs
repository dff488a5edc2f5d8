use netalloc::scenario::{generate_scenario, load_scenario, save_scenario};
use netalloc::{Error, Scenario, ScenarioParams};
use serde_json::Value;

fn json_of(s: &Scenario) -> Value {
    serde_json::from_str(&s.to_json()).unwrap()
}

fn reload(v: &Value) -> netalloc::Result<Scenario> {
    Scenario::from_json(&v.to_string(), "edited.json".as_ref())
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let s = generate_scenario(&ScenarioParams::uniform(3, 5, 2, 0.7).with_seed(42)).unwrap();
    save_scenario(&s, &path).unwrap();
    let back = load_scenario(&path).unwrap();
    assert_eq!(back, s);
    for l in 0..3 {
        for m in 0..3 {
            for u in 0..2 {
                for n in 0..5 {
                    assert_eq!(back.gain(l, m, u, n).to_bits(), s.gain(l, m, u, n).to_bits());
                }
            }
        }
    }
    assert_eq!(back.to_json(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn negative_gain_is_rejected_with_index() {
    let s = generate_scenario(&ScenarioParams::uniform(2, 3, 2, 1.0)).unwrap();
    let mut v = json_of(&s);
    v["gains"][1][0][1][2] = (-1.0).into();
    match reload(&v) {
        Err(Error::InvalidScenario(msgs)) => assert!(msgs.iter().any(|m| m.contains("gains[1][0][1][2]")), "{msgs:?}"),
        other => panic!("expected InvalidScenario, got {other:?}"),
    }
}

#[test]
fn missing_subcarrier_column_is_dimension_error() {
    let s = generate_scenario(&ScenarioParams::uniform(2, 3, 2, 1.0)).unwrap();
    let mut v = json_of(&s);
    v["gains"][0][1][0].as_array_mut().unwrap().pop();
    match reload(&v) {
        Err(Error::Dimension { what, expected, found }) => {
            assert_eq!(what, "gains[0][1][0]");
            assert_eq!((expected, found), (3, 2));
        }
        other => panic!("expected Dimension, got {other:?}"),
    }
}

#[test]
fn unknown_or_missing_fields_name_the_path() {
    let s = generate_scenario(&ScenarioParams::uniform(1, 2, 1, 1.0)).unwrap();
    let mut v = json_of(&s);
    v["params"].as_object_mut().unwrap().remove("snr_gap");
    let err = reload(&v).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
    let text = err.to_string();
    assert!(text.contains("edited.json") && text.contains("snr_gap"), "{text}");
}

#[test]
fn invalid_params_in_file_rejected() {
    let s = generate_scenario(&ScenarioParams::uniform(2, 2, 1, 1.0)).unwrap();
    let mut v = json_of(&s);
    v["params"]["snr_gap"] = 0.5.into();
    assert!(reload(&v).is_err());
}

#[test]
fn missing_file_names_path() {
    let err = load_scenario("/definitely/not/here.json".as_ref()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/definitely/not/here.json"));
}

#[test]
fn noise_override_round_trips() {
    let s = generate_scenario(&ScenarioParams::uniform(1, 2, 2, 1.0)).unwrap();
    let mut v = json_of(&s);
    v["noise"] = serde_json::json!([[[1e-6, 2e-6], [3e-6, 4e-6]]]);
    let back = reload(&v).unwrap();
    assert_eq!(back.noise(0, 1, 0), 3e-6);
    assert_eq!(reload(&json_of(&back)).unwrap(), back);
}
