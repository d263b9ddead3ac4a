use std::path::PathBuf;

use proptest::prelude::*;
use teer_core::trials::{extract_timings, Markers, TrialLog};
use teer_core::Error;

fn fixture() -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic_markers.jsonl");
    std::fs::read_to_string(path).unwrap()
}

fn parse(text: &str) -> teer_core::Result<TrialLog> {
    TrialLog::read_jsonl(text.as_bytes())
}

fn without(text: &str, needle: &str) -> String {
    let mut removed = false;
    text.lines()
        .filter(|l| {
            let hit = !removed && l.contains(needle);
            removed |= hit;
            !hit
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

#[test]
fn fixture_markers_are_recovered() {
    let log = parse(&fixture()).unwrap();
    let m = Markers::from_log(&log).unwrap();
    assert_eq!(m.steps.iter().map(|(s, _)| *s).collect::<Vec<_>>(), (1..=8).collect::<Vec<u8>>());
    assert_eq!(m.corrections.len(), 2);
    assert_eq!(m.last_end(2), Some(3.25));
    assert!(m.contains(&[2, 3], 4.0));
    assert!(!m.contains(&[2, 3], 5.5));
}

#[test]
fn step_one_is_untimed() {
    let text = fixture();
    let base = extract_timings(&parse(&text).unwrap()).unwrap();
    let shifted = without(&without(&text, r#""event":"step_start","step":1"#), r#""event":"step_end","step":1"#);
    assert_eq!(extract_timings(&parse(&shifted).unwrap()).unwrap(), base);
}

#[test]
fn broken_marker_sequences_rejected() {
    let text = fixture();
    for needle in [r#""event":"step_end","step":8"#, r#""event":"correction_end""#, r#""event":"step_start","step":4"#] {
        let broken = without(&text, needle);
        assert!(matches!(parse(&broken), Err(Error::MalformedLog(_))), "removing {needle} should break the log");
    }
    let nested = text.replace(r#""event":"correction_start""#, r#""event":"step_start","step":5"#);
    assert!(parse(&nested).is_err());
}

#[test]
fn off_grid_event_rejected() {
    let text = fixture().replace(r#"{"type":"event","t":3.25,"event":"step_end""#, r#"{"type":"event","t":3.3,"event":"step_end""#);
    assert!(matches!(parse(&text), Err(Error::MalformedLog(_))));
}

#[test]
fn missing_tick_rejected() {
    let text = without(&fixture(), r#""type":"tick","t":7.0,"#);
    assert!(matches!(parse(&text), Err(Error::MalformedLog(_))));
}

proptest! {
    /// Moving a whole trial later in time leaves every duration unchanged.
    #[test]
    fn timings_invariant_to_leading_idle(extra in 1usize..40) {
        let text = fixture();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let tick0 = lines[1].clone();
        let mut shifted = vec![lines.remove(0)];
        let shift = extra as f64 * 0.25;
        for k in 0..extra {
            shifted.push(tick0.replacen(r#""t":0.0"#, &format!(r#""t":{}"#, k as f64 * 0.25), 1));
        }
        for l in lines {
            let mut v: serde_json::Value = serde_json::from_str(&l).unwrap();
            let t = v["t"].as_f64().unwrap() + shift;
            v["t"] = serde_json::json!(t);
            shifted.push(v.to_string());
        }
        let a = extract_timings(&parse(&text).unwrap()).unwrap();
        let b = extract_timings(&parse(&(shifted.join("\n") + "\n")).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}
