//! Scenario files.
//!
//! A scenario is a JSON document. Agent indices are 1-based, as are edge
//! endpoints; everything inside the simulator is 0-based and the conversion
//! happens once, in [`ScenarioFile::to_scenario`].
//!
//! ```json
//! {
//!   "v": 1,
//!   "n": 6,
//!   "edges": [[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [1, 6], [2, 5]],
//!   "accessible": [3, 4],
//!   "gains": { "a": 0.2, "b": 0.05, "sigma": 1.0 },
//!   "delay": 0.5,
//!   "dt": 0.01,
//!   "duration": 300.0,
//!   "q0": [[2.6, 1.6], [2.6, 1.6], [2.6, 1.6], [2.6, 1.6], [2.6, 1.6], [2.6, 1.6]],
//!   "q_r": [0.55, 0.60],
//!   "operator": { "kind": "proportional", "gain": 0.5, "u_max": 1.0 },
//!   "mode": "scattering"
//! }
//! ```
//!
//! Optional fields: `xi0` (zeros), `biases` (zeros), `obstacles` (none),
//! `monitor` (`{"tolerance": 0.01, "fail_fast": false}`), `name`.
//! Per-edge gains are given as `{"sigma": 1.0, "per_edge": [[a, b], ...]}` in
//! the order of `edges`. Operator kinds: `proportional {gain, u_max}`,
//! `scripted {segments: [{start, end, u}], u_max}`, `replay {path | commands}`
//! and `live {hold_timeout, u_max}`. A replay `path` is resolved against the
//! scenario file's directory and may name a session record (`.json`) or a
//! trajectory CSV.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scatternet_core::operator::{Segment, DEFAULT_HOLD_TIMEOUT, DEFAULT_U_MAX};
use scatternet_core::simulator::reference;
use scatternet_core::{Bias, Gains, Graph, Mode, MonitorConfig, OperatorSpec, Scenario, Vec2};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn version() -> u32 {
    SCHEMA_VERSION
}

fn default_dt() -> f64 {
    0.01
}

fn default_u_max() -> f64 {
    DEFAULT_U_MAX
}

fn default_hold() -> f64 {
    DEFAULT_HOLD_TIMEOUT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "version")]
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub accessible: Vec<usize>,
    pub gains: GainsFile,
    pub delay: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    pub q0: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi0: Option<Vec<[f64; 2]>>,
    pub q_r: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biases: Option<Vec<[f64; 2]>>,
    pub operator: OperatorFile,
    #[serde(default)]
    pub mode: ModeFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub monitor: MonitorFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub sigma: f64,
    /// `[a, b]` per entry of `edges`, in file order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_edge: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorFile {
    Proportional {
        gain: f64,
        #[serde(default = "default_u_max")]
        u_max: f64,
    },
    Scripted {
        #[serde(default)]
        segments: Vec<SegmentFile>,
        #[serde(default = "default_u_max")]
        u_max: f64,
    },
    Replay {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        commands: Option<Vec<[f64; 2]>>,
    },
    Live {
        #[serde(default = "default_hold")]
        hold_timeout: f64,
        #[serde(default = "default_u_max")]
        u_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    pub start: f64,
    pub end: f64,
    pub u: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeFile {
    #[default]
    Scattering,
    DelayFree,
    RawDelay,
}

impl From<ModeFile> for Mode {
    fn from(m: ModeFile) -> Self {
        match m {
            ModeFile::Scattering => Mode::Scattering,
            ModeFile::DelayFree => Mode::DelayFree,
            ModeFile::RawDelay => Mode::RawDelay,
        }
    }
}

/// Geometry shown to the operator. It never enters the control law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    Circle { center: [f64; 2], radius: f64 },
    Rect { min: [f64; 2], max: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorFile {
    pub tolerance: f64,
    #[serde(default)]
    pub fail_fast: bool,
}

impl Default for MonitorFile {
    fn default() -> Self {
        let d = MonitorConfig::default();
        Self { tolerance: d.tolerance, fail_fast: d.fail_fast }
    }
}

fn v2(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

impl ScenarioFile {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::bad(origin, e.to_string()))?;
        if file.v != SCHEMA_VERSION {
            return Err(Error::bad(origin, format!("v: unsupported schema version {}", file.v)));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Validated simulator scenario. `base` resolves relative replay paths.
    pub fn to_scenario(&self, base: Option<&Path>) -> Result<Scenario> {
        let origin = self.name.clone().unwrap_or_else(|| String::from("<scenario>"));
        let bad = |msg: String| Error::bad(origin.clone(), msg);
        let n = self.n;
        if n == 0 {
            return Err(bad("n: need at least one agent".into()));
        }
        let to_zero = |what: String, k: usize| -> Result<usize> {
            if (1..=n).contains(&k) {
                Ok(k - 1)
            } else {
                Err(bad(format!("{what}: agent {k} outside 1..={n}")))
            }
        };
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, &[i, j]) in self.edges.iter().enumerate() {
            let e = (to_zero(format!("edges[{k}]"), i)?, to_zero(format!("edges[{k}]"), j)?);
            let key = (e.0.min(e.1), e.0.max(e.1));
            if let Some(prev) = edges.iter().position(|&(a, b): &(usize, usize)| (a.min(b), a.max(b)) == key) {
                return Err(bad(format!("edges[{k}]: duplicates edges[{prev}]")));
            }
            edges.push(e);
        }
        let accessible = self
            .accessible
            .iter()
            .enumerate()
            .map(|(k, &i)| to_zero(format!("accessible[{k}]"), i))
            .collect::<Result<Vec<_>>>()?;
        let graph = Graph::new(n, &edges, &accessible).map_err(|e| bad(format!("graph: {e}")))?;

        let gains = match (&self.gains.per_edge, self.gains.a, self.gains.b) {
            (Some(list), None, None) => {
                if list.len() != edges.len() {
                    return Err(bad(format!(
                        "gains.per_edge: {} entries for {} edges",
                        list.len(),
                        edges.len()
                    )));
                }
                let mut canonical = vec![(0.0, 0.0); edges.len()];
                for (&(i, j), ab) in edges.iter().zip(list) {
                    let e = graph.edge_index(i, j).expect("edge was just inserted");
                    canonical[e] = (ab[0], ab[1]);
                }
                Gains::per_edge(&graph, &canonical, self.gains.sigma)
            }
            (None, Some(a), Some(b)) => Gains::uniform(&graph, a, b, self.gains.sigma),
            _ => return Err(bad("gains: give either both a and b, or per_edge".into())),
        }
        .map_err(|e| bad(format!("gains: {e}")))?;

        let per_agent = |what: &str, list: &Option<Vec<[f64; 2]>>| -> Result<Vec<Vec2>> {
            match list {
                None => Ok(vec![Vec2::ZERO; n]),
                Some(l) if l.len() == n => Ok(l.iter().copied().map(v2).collect()),
                Some(l) => Err(bad(format!("{what}: {} entries for {n} agents", l.len()))),
            }
        };
        let q0 = per_agent("q0", &Some(self.q0.clone()))?;
        let xi0 = per_agent("xi0", &self.xi0)?;
        let biases = per_agent("biases", &self.biases)?;

        let operator = match &self.operator {
            OperatorFile::Proportional { gain, u_max } => OperatorSpec::Proportional { gain: *gain, u_max: *u_max },
            OperatorFile::Scripted { segments, u_max } => OperatorSpec::Scripted {
                segments: segments.iter().map(|s| Segment { start: s.start, end: s.end, u: v2(s.u) }).collect(),
                u_max: *u_max,
            },
            OperatorFile::Replay { path, commands } => {
                let commands = match (path, commands) {
                    (None, Some(c)) => c.iter().copied().map(v2).collect(),
                    (Some(p), None) => {
                        let full = match base {
                            Some(dir) if p.is_relative() => dir.join(p),
                            _ => p.clone(),
                        };
                        crate::record::load_commands(&full)?
                    }
                    _ => return Err(bad("operator: replay needs exactly one of path or commands".into())),
                };
                OperatorSpec::Replay { commands }
            }
            OperatorFile::Live { hold_timeout, u_max } => {
                OperatorSpec::Live { hold_timeout: *hold_timeout, u_max: *u_max }
            }
        };

        for (k, o) in self.obstacles.iter().enumerate() {
            let ok = match o {
                Obstacle::Circle { center, radius } => center.iter().all(|c| c.is_finite()) && *radius > 0.0,
                Obstacle::Rect { min, max } => min[0] < max[0] && min[1] < max[1],
            };
            if !ok {
                return Err(bad(format!("obstacles[{k}]: degenerate geometry")));
            }
        }

        let scenario = Scenario {
            graph,
            gains,
            delay: self.delay,
            dt: self.dt,
            duration: self.duration,
            q0,
            xi0,
            q_r: v2(self.q_r),
            biases: Bias(biases),
            operator,
            mode: self.mode.into(),
            monitor: MonitorConfig { tolerance: self.monitor.tolerance, fail_fast: self.monitor.fail_fast },
        };
        scenario.validate().map_err(|e| bad(e.to_string()))?;
        Ok(scenario)
    }

    /// The six-robot experiment with the proportional operator.
    pub fn reference(mode: ModeFile, delay: f64) -> Self {
        Self {
            v: SCHEMA_VERSION,
            name: None,
            n: 6,
            edges: reference::EDGES.iter().map(|&(i, j)| [i, j]).collect(),
            accessible: reference::ACCESSIBLE.to_vec(),
            gains: GainsFile {
                a: Some(reference::A),
                b: Some(reference::B),
                sigma: reference::SIGMA,
                per_edge: None,
            },
            delay,
            dt: reference::DT,
            duration: reference::DURATION,
            q0: vec![reference::Q0.to_array(); 6],
            xi0: None,
            q_r: reference::Q_R.to_array(),
            biases: Some(reference::BIASES.iter().map(|b| b.to_array()).collect()),
            operator: OperatorFile::Proportional { gain: reference::OPERATOR_GAIN, u_max: reference::U_MAX },
            mode,
            obstacles: Vec::new(),
            monitor: MonitorFile::default(),
        }
    }
}

/// A scenario file together with the directory it came from.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub base: Option<PathBuf>,
}

impl LoadedScenario {
    pub fn load(path: &Path) -> Result<Self> {
        let mut file = ScenarioFile::load(path)?;
        if file.name.is_none() {
            file.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(Self { file, base: path.parent().map(Path::to_path_buf) })
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.file.to_scenario(self.base.as_deref())
    }
}
