use scatternet::record::{RecordKind, SessionRecord};
use scatternet::scenario::{ModeFile, ScenarioFile};
use scatternet::Error;
use scatternet_core::simulator;

fn batch(duration: f64) -> (ScenarioFile, SessionRecord) {
    let mut file = ScenarioFile::reference(ModeFile::Scattering, 0.5);
    file.duration = duration;
    let log = simulator::run(&file.to_scenario(None).unwrap()).unwrap();
    let rec = SessionRecord::new(RecordKind::Batch, &file, &log, Vec::new());
    (file, rec)
}

#[test]
fn batch_record_replays_exactly_after_a_disk_round_trip() {
    let (_, rec) = batch(20.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    rec.save(&path).unwrap();
    let loaded = SessionRecord::load(&path).unwrap();
    assert_eq!(loaded, rec);
    let log = loaded.replay().unwrap();
    assert_eq!(log.records.len(), rec.trajectory.len());
    assert_eq!(scatternet::export::Summary::new(&log, rec.summary.name.clone(), 0.5), rec.summary);
}

#[test]
fn modified_gains_diverge() {
    let (_, mut rec) = batch(5.0);
    rec.scenario.gains.a = Some(0.21);
    match rec.replay() {
        Err(Error::ReplayDivergence { step, what, .. }) => {
            // the initial state is shared; the first difference shows up after one step
            assert_eq!(step, 1);
            assert!(what.starts_with('q') || what == "z", "{what}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn tampered_command_is_reported() {
    let (_, mut rec) = batch(2.0);
    rec.commands[7][0] += 1e-12;
    assert!(matches!(rec.replay(), Err(Error::ReplayDivergence { step: 8, .. })));
}

#[test]
fn truncated_record_is_a_bad_file_error() {
    let (_, rec) = batch(1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    rec.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(SessionRecord::load(&path), Err(Error::BadScenario { .. })));
}

#[test]
fn record_drives_a_replay_scenario() {
    let (file, rec) = batch(3.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    rec.save(&path).unwrap();
    let mut replay = file.clone();
    replay.operator = scatternet::scenario::OperatorFile::Replay { path: Some("run.json".into()), commands: None };
    let sc = replay.to_scenario(Some(dir.path())).unwrap();
    let log = simulator::run(&sc).unwrap();
    rec.verify(&log).unwrap();
}
