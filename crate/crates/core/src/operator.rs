//! Models of the human decision process that turns the displayed error
//! `q_r - z` into the velocity command `u_h`.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;

use crate::vector::Vec2;

pub const DEFAULT_U_MAX: f64 = 1.0;
pub const DEFAULT_HOLD_TIMEOUT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorError {
    NonPositiveParameter { name: &'static str, value: f64 },
    InvalidSegment { index: usize },
    OverlappingSegments { first: usize, second: usize },
    /// Live operators only run inside a session server.
    LiveNotResolvable,
}

impl fmt::Display for OperatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorError::NonPositiveParameter { name, value } => {
                write!(f, "operator parameter {name} must be positive, got {value}")
            }
            OperatorError::InvalidSegment { index } => {
                write!(f, "schedule segment {index} must satisfy start < end with a finite command")
            }
            OperatorError::OverlappingSegments { first, second } => {
                write!(f, "schedule segments {first} and {second} overlap")
            }
            OperatorError::LiveNotResolvable => {
                write!(f, "live operators need a session server; batch runs cannot resolve them")
            }
        }
    }
}

/// What the operator sees at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub step: usize,
    pub t: f64,
    pub z: Vec2,
    pub q_r: Vec2,
}

pub trait Operator {
    fn command(&mut self, obs: &Observation) -> Vec2;

    /// Input-strict-passivity margin `epsilon` used in the energy function.
    fn passivity_margin(&self) -> f64 {
        0.0
    }
}

/// Scales `u` down to norm `u_max` if it is longer, keeping its direction.
pub fn saturate(u: Vec2, u_max: f64) -> Vec2 {
    let norm = u.norm();
    if norm > u_max {
        (u_max / norm) * u
    } else {
        u
    }
}

/// `u_h = sat(K (q_r - z))`.
pub fn proportional_command(q_r: Vec2, z: Vec2, gain: f64, u_max: f64) -> Vec2 {
    saturate(gain * (q_r - z), u_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportional {
    pub gain: f64,
    pub u_max: f64,
}

impl Operator for Proportional {
    fn command(&mut self, obs: &Observation) -> Vec2 {
        proportional_command(obs.q_r, obs.z, self.gain, self.u_max)
    }

    // memoryless K e is input strictly passive with epsilon = K where unsaturated
    fn passivity_margin(&self) -> f64 {
        self.gain
    }
}

/// Constant command on the half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub u: Vec2,
}

/// Piecewise-constant command schedule with non-overlapping segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    segments: Vec<Segment>,
}

impl Schedule {
    pub fn new(mut segments: Vec<Segment>) -> Result<Self, OperatorError> {
        for (index, s) in segments.iter().enumerate() {
            if !(s.start < s.end && s.start.is_finite() && s.u.is_finite()) {
                return Err(OperatorError::InvalidSegment { index });
            }
        }
        // sort but keep original indices for the error report
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.sort_by(|&a, &b| segments[a].start.total_cmp(&segments[b].start));
        for w in order.windows(2) {
            if segments[w[1]].start < segments[w[0]].end {
                return Err(OperatorError::OverlappingSegments { first: w[0], second: w[1] });
            }
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start));
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Value of the active segment, zero outside all segments.
    pub fn command_at(&self, t: f64) -> Vec2 {
        let k = self.segments.partition_point(|s| s.start <= t);
        match k.checked_sub(1).map(|k| &self.segments[k]) {
            Some(s) if t < s.end => s.u,
            _ => Vec2::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scripted {
    pub schedule: Schedule,
    pub u_max: f64,
}

impl Operator for Scripted {
    fn command(&mut self, obs: &Observation) -> Vec2 {
        saturate(self.schedule.command_at(obs.t), self.u_max)
    }
}

/// Plays back a recorded per-step command sequence verbatim; zero past the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub commands: Vec<Vec2>,
    /// Margin of the operator that produced the recording, so the energy
    /// ledger of a replay matches the original.
    pub margin: f64,
}

impl Replay {
    pub fn new(commands: Vec<Vec2>) -> Self {
        Self { commands, margin: 0.0 }
    }
}

impl Operator for Replay {
    fn command(&mut self, obs: &Observation) -> Vec2 {
        self.commands.get(obs.step).copied().unwrap_or(Vec2::ZERO)
    }

    fn passivity_margin(&self) -> f64 {
        self.margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandSource {
    Proportional,
    Scripted,
    Replay,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandSample {
    pub u: Vec2,
    pub t: f64,
    pub source: CommandSource,
}

/// Zero-order hold of the most recent live sample, decaying to zero once the
/// sample is older than `hold_timeout`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveAdapter {
    latest: Option<CommandSample>,
    hold_timeout: f64,
    u_max: f64,
}

impl LiveAdapter {
    pub fn new(hold_timeout: f64, u_max: f64) -> Self {
        Self { latest: None, hold_timeout, u_max }
    }

    /// Records a sample. Samples older than the current one are ignored;
    /// returns whether the sample was taken.
    pub fn push(&mut self, sample: CommandSample) -> bool {
        if !sample.u.is_finite() {
            return false;
        }
        match self.latest {
            Some(prev) if sample.t < prev.t => false,
            _ => {
                self.latest = Some(sample);
                true
            }
        }
    }

    pub fn hold_timeout(&self) -> f64 {
        self.hold_timeout
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn latest(&self) -> Option<&CommandSample> {
        self.latest.as_ref()
    }

    pub fn command_at(&self, now: f64) -> Vec2 {
        match self.latest {
            Some(s) if now - s.t <= self.hold_timeout => saturate(s.u, self.u_max),
            _ => Vec2::ZERO,
        }
    }
}

impl Operator for LiveAdapter {
    fn command(&mut self, obs: &Observation) -> Vec2 {
        self.command_at(obs.t)
    }
}

/// Serializable description of an operator.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    Proportional { gain: f64, u_max: f64 },
    Scripted { segments: Vec<Segment>, u_max: f64 },
    Replay { commands: Vec<Vec2> },
    Live { hold_timeout: f64, u_max: f64 },
}

impl OperatorSpec {
    pub fn zero() -> Self {
        OperatorSpec::Scripted { segments: Vec::new(), u_max: DEFAULT_U_MAX }
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        let positive = |name, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(OperatorError::NonPositiveParameter { name, value })
            }
        };
        match self {
            OperatorSpec::Proportional { gain, u_max } => {
                positive("gain", *gain)?;
                positive("u_max", *u_max)
            }
            OperatorSpec::Scripted { segments, u_max } => {
                positive("u_max", *u_max)?;
                Schedule::new(segments.clone()).map(|_| ())
            }
            OperatorSpec::Replay { .. } => Ok(()),
            OperatorSpec::Live { hold_timeout, u_max } => {
                positive("hold_timeout", *hold_timeout)?;
                positive("u_max", *u_max)
            }
        }
    }

    /// Input-strict passivity margin `eps` the operator is known to satisfy.
    pub fn passivity_margin(&self) -> f64 {
        match self {
            OperatorSpec::Proportional { gain, .. } => *gain,
            _ => 0.0,
        }
    }

    /// Instantiates a batch operator. Live specs are rejected.
    pub fn build(&self) -> Result<Box<dyn Operator + Send>, OperatorError> {
        self.validate()?;
        Ok(match self {
            OperatorSpec::Proportional { gain, u_max } => {
                Box::new(Proportional { gain: *gain, u_max: *u_max })
            }
            OperatorSpec::Scripted { segments, u_max } => Box::new(Scripted {
                schedule: Schedule::new(segments.clone())?,
                u_max: *u_max,
            }),
            OperatorSpec::Replay { commands } => Box::new(Replay::new(commands.clone())),
            OperatorSpec::Live { .. } => return Err(OperatorError::LiveNotResolvable),
        })
    }
}
