use std::path::Path;

use scatternet::export::{self, trajectory_header, write_trajectory, write_violations, Summary};
use scatternet::record::load_commands;
use scatternet::scenario::{ModeFile, ScenarioFile};
use scatternet_core::simulator;

fn two_agents() -> ScenarioFile {
    let text = r#"{
        "n": 2,
        "edges": [[1, 2]],
        "accessible": [1],
        "gains": {"a": 1.0, "b": 0.5, "sigma": 1.0},
        "delay": 0.0,
        "dt": 0.1,
        "duration": 0.2,
        "q0": [[1.0, 0.0], [0.0, 0.0]],
        "q_r": [0.0, 0.0],
        "operator": {"kind": "scripted"},
        "mode": "delay_free"
    }"#;
    ScenarioFile::from_json(text, "two_agents").unwrap()
}

/// Hand-integrated reference: two agents, one edge, zero input.
#[test]
fn trajectory_csv_matches_golden_file() {
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/two_agents.csv")).unwrap();
    let sc = two_agents().to_scenario(None).unwrap();
    let log = simulator::run(&sc).unwrap();
    let mut buf = Vec::new();
    write_trajectory(&log, &mut buf).unwrap();
    let written = String::from_utf8(buf).unwrap();

    let mut want = golden.lines();
    let mut got = written.lines();
    assert_eq!(got.next(), want.next(), "column order changed");
    let mut rows = 0;
    for (w, g) in want.zip(got) {
        let (w, g): (Vec<&str>, Vec<&str>) = (w.split(',').collect(), g.split(',').collect());
        assert_eq!(w.len(), g.len());
        for (a, b) in w.iter().zip(&g) {
            if a.is_empty() {
                assert!(b.is_empty());
                continue;
            }
            let (a, b): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            assert!((a - b).abs() < 1e-12, "{a} vs {b} in row {rows}");
        }
        rows += 1;
    }
    assert_eq!(rows, 3);
}

#[test]
fn header_layout() {
    let h = trajectory_header(1);
    assert_eq!(
        h.join(","),
        "step,t,z_x,z_y,u_x,u_y,q1_x,q1_y,xi1_x,xi1_y,storage,human,energy,residual"
    );
    assert_eq!(trajectory_header(6).len(), 6 + 4 * 6 + 4);
}

#[test]
fn commands_survive_a_csv_round_trip_bit_for_bit() {
    let mut file = ScenarioFile::reference(ModeFile::Scattering, 0.5);
    file.duration = 5.0;
    let sc = file.to_scenario(None).unwrap();
    let log = simulator::run(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trajectory(&log, std::fs::File::create(&path).unwrap()).unwrap();
    let back = load_commands(&path).unwrap();
    assert_eq!(back.len(), log.records.len());
    for (a, b) in back.iter().zip(log.commands()) {
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
    }
}

#[test]
fn violation_report_and_summary() {
    let mut file = ScenarioFile::reference(ModeFile::RawDelay, 0.5);
    file.duration = 30.0;
    let sc = file.to_scenario(None).unwrap();
    let log = simulator::run(&sc).unwrap();
    assert!(!log.violations.is_empty());

    let mut buf = Vec::new();
    write_violations(&log.violations, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("step,t,residual,tolerance\n"));
    assert_eq!(text.lines().count(), log.violations.len() + 1);

    let summary = Summary::new(&log, Some("raw".into()), 0.5);
    assert_eq!(summary.violations, log.violations.len());
    assert_eq!(summary.mode, "raw_delay");
    let json: serde_json::Value = serde_json::to_value(&summary).unwrap();
    for key in ["arrival_time", "input_total_variation", "max_residual", "violations", "converged"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert!(summary.to_text().contains("violations          "));

    let dir = tempfile::tempdir().unwrap();
    export::write_artifacts(dir.path(), &log, &summary).unwrap();
    for f in [export::TRAJECTORY_FILE, export::METRICS_JSON, export::METRICS_TEXT, export::VIOLATIONS_FILE] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}
