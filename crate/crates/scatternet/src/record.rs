//! Session records and deterministic replay.
//!
//! A record is self-contained JSON: the scenario snapshot, the command applied
//! at every step, the raw live command stream (if any), a compact trajectory
//! and the run summary. Replaying feeds the per-step commands back through the
//! simulator and demands a bit-identical trajectory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use scatternet_core::simulator;
use scatternet_core::{TrajectoryLog, Vec2};

use crate::error::{Error, Result};
use crate::export::Summary;
use crate::scenario::{OperatorFile, ScenarioFile};

pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Batch,
    Live,
}

/// One accepted live command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    /// First step the command was visible to.
    pub step: usize,
    /// Simulation time of that step.
    pub t: f64,
    /// Client-side timestamp, as sent.
    pub client_t: Option<f64>,
    pub u: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub t: f64,
    pub z: [f64; 2],
    pub q: Vec<[f64; 2]>,
    pub xi: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub v: u32,
    pub kind: RecordKind,
    pub scenario: ScenarioFile,
    /// Command applied at step `k`, for every recorded step.
    pub commands: Vec<[f64; 2]>,
    #[serde(default)]
    pub samples: Vec<CommandEntry>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub summary: Summary,
}

impl SessionRecord {
    /// Record of `log`, which must come from `scenario`. The snapshot's
    /// duration is set to the recorded length.
    pub fn new(kind: RecordKind, scenario: &ScenarioFile, log: &TrajectoryLog, samples: Vec<CommandEntry>) -> Self {
        let mut snapshot = scenario.clone();
        let steps = log.records.len().saturating_sub(1);
        snapshot.duration = steps as f64 * log.dt;
        let trajectory = log
            .records
            .iter()
            .map(|r| TrajectoryPoint {
                step: r.step,
                t: r.t,
                z: r.z.to_array(),
                q: r.q.iter().map(|p| p.to_array()).collect(),
                xi: r.xi.iter().map(|p| p.to_array()).collect(),
            })
            .collect();
        Self {
            v: RECORD_VERSION,
            kind,
            commands: log.commands().iter().map(|u| u.to_array()).collect(),
            samples,
            trajectory,
            summary: Summary::new(log, snapshot.name.clone(), snapshot.delay),
            scenario: snapshot,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let origin = path.display().to_string();
        let rec: SessionRecord = serde_json::from_str(&text).map_err(|e| Error::bad(&origin, e.to_string()))?;
        if rec.v != RECORD_VERSION {
            return Err(Error::bad(origin, format!("v: unsupported record version {}", rec.v)));
        }
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    /// Re-runs the snapshot with the recorded commands.
    pub fn rerun(&self) -> Result<TrajectoryLog> {
        let mut file = self.scenario.clone();
        // a snapshot must not depend on files next to the original scenario
        if let OperatorFile::Replay { .. } = file.operator {
            file.operator = OperatorFile::Replay { path: None, commands: Some(self.commands.clone()) };
        }
        let scenario = file.to_scenario(None)?;
        let commands = self.commands.iter().map(|&[x, y]| Vec2::new(x, y)).collect();
        Ok(simulator::replay(&scenario, commands)?)
    }

    /// Checks `log` against the recorded trajectory, bit for bit.
    pub fn verify(&self, log: &TrajectoryLog) -> Result<()> {
        let diverged = |step: usize, what: &str, recorded: String, replayed: String| Error::ReplayDivergence {
            step,
            what: what.to_string(),
            recorded,
            replayed,
        };
        if log.records.len() != self.trajectory.len() {
            return Err(diverged(
                0,
                "length",
                self.trajectory.len().to_string(),
                log.records.len().to_string(),
            ));
        }
        let same = |a: [f64; 2], b: [f64; 2]| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits();
        for (k, (want, got)) in self.trajectory.iter().zip(&log.records).enumerate() {
            if want.t.to_bits() != got.t.to_bits() {
                return Err(diverged(k, "t", want.t.to_string(), got.t.to_string()));
            }
            if !same(want.z, got.z.to_array()) {
                return Err(diverged(k, "z", format!("{:?}", want.z), format!("{:?}", got.z.to_array())));
            }
            if !same(self.commands[k], got.u_h.to_array()) {
                return Err(diverged(k, "u_h", format!("{:?}", self.commands[k]), format!("{:?}", got.u_h.to_array())));
            }
            for (i, (wq, gq)) in want.q.iter().zip(&got.q).enumerate() {
                if !same(*wq, gq.to_array()) {
                    return Err(diverged(k, &format!("q{}", i + 1), format!("{wq:?}"), format!("{:?}", gq.to_array())));
                }
            }
            for (i, (wx, gx)) in want.xi.iter().zip(&got.xi).enumerate() {
                if !same(*wx, gx.to_array()) {
                    return Err(diverged(k, &format!("xi{}", i + 1), format!("{wx:?}"), format!("{:?}", gx.to_array())));
                }
            }
        }
        Ok(())
    }

    /// Re-runs and verifies; returns the fresh log.
    pub fn replay(&self) -> Result<TrajectoryLog> {
        let log = self.rerun()?;
        self.verify(&log)?;
        Ok(log)
    }
}

/// Per-step commands from a session record (`.json`) or a trajectory CSV.
pub fn load_commands(path: &Path) -> Result<Vec<Vec2>> {
    if path.extension().is_some_and(|e| e == "json") {
        let rec = SessionRecord::load(path)?;
        return Ok(rec.commands.iter().map(|&[x, y]| Vec2::new(x, y)).collect());
    }
    let origin = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::bad(&origin, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::bad(&origin, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::bad(&origin, format!("missing column {name}")))
    };
    let (ux, uy) = (col("u_x")?, col("u_y")?);
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::bad(&origin, e.to_string()))?;
        let parse = |c: usize| {
            row.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::bad(&origin, format!("row {}: bad command value", line + 2)))
        };
        out.push(Vec2::new(parse(ux)?, parse(uy)?));
    }
    Ok(out)
}
