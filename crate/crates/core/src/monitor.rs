//! Storage functions, passivity residuals and run metrics.
//!
//! The network storage is
//! `S = (1/m) sum_i S_i + (1/m) sum_edges S_c`, with robot storage taken
//! relative to the reference `q_r` and channel storage taken relative to the
//! stationary wave `s_q = [sqrt(sigma/2) q_r, 0]`.
//!
//! Channel storage is the left-rectangle sum over the samples in flight
//! (emitted, not yet received). Under explicit Euler this makes the discrete
//! balance exact: across one step the residual is
//! `-(1/m) sum a |q_i - r_ij|^2 + (dt/2m) sum |x_dot_i|^2`.

use alloc::vec::Vec;
use core::fmt;

use crate::scattering::{delay_steps, ScatteringError};
use crate::simulator::TrajectoryLog;
use crate::vector::{Vec2, Vec4};

/// Radius around `q_r` that counts as arrived.
pub const ARRIVAL_TOLERANCE: f64 = 0.05;
pub const DEFAULT_RESIDUAL_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorError {
    InsufficientHistory { needed: usize, forward: usize, backward: usize },
    Timing(ScatteringError),
}

impl fmt::Display for MonitorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorError::InsufficientHistory { needed, forward, backward } => write!(
                f,
                "channel window needs {needed} samples per direction, got {forward} and {backward}"
            ),
            MonitorError::Timing(e) => write!(f, "{e}"),
        }
    }
}

/// `1/2 |q - q_r|^2 + 1/2 |xi|^2`.
pub fn robot_storage(x: &Vec4, q_r: Vec2) -> f64 {
    0.5 * (x.q() - q_r).norm_sq() + 0.5 * x.xi().norm_sq()
}

/// The stationary wave `[sqrt(sigma/2) q_r, 0]` that channel storage is
/// measured against.
pub fn reference_wave(q_r: Vec2, sigma: f64) -> Vec4 {
    Vec4::from_parts(libm::sqrt(sigma / 2.0) * q_r, Vec2::ZERO)
}

/// Channel storage from the in-flight samples of both directions.
pub(crate) fn in_flight_storage(
    forward: impl Iterator<Item = Vec4>,
    backward: impl Iterator<Item = Vec4>,
    s_q: Vec4,
    dt: f64,
) -> f64 {
    let fwd: f64 = forward.map(|s| 0.5 * (s - s_q).norm_sq()).sum();
    let bwd: f64 = backward.map(|s| 0.5 * (s + s_q).norm_sq()).sum();
    dt * (fwd + bwd)
}

/// Storage of one channel over the window `[t - delay, t)`.
///
/// `forward` holds the `s+` samples sent by the lower-indexed robot and
/// `backward` the `s-` samples sent by the other end, oldest first at step
/// `dt`. The last `delay / dt` samples of each are used.
pub fn channel_storage(
    forward: &[Vec4],
    backward: &[Vec4],
    q_r: Vec2,
    sigma: f64,
    delay: f64,
    dt: f64,
) -> Result<f64, MonitorError> {
    let needed = delay_steps(delay, dt).map_err(MonitorError::Timing)?;
    if forward.len() < needed || backward.len() < needed {
        return Err(MonitorError::InsufficientHistory {
            needed,
            forward: forward.len(),
            backward: backward.len(),
        });
    }
    let fwd = &forward[forward.len() - needed..];
    let bwd = &backward[backward.len() - needed..];
    Ok(in_flight_storage(
        fwd.iter().copied(),
        bwd.iter().copied(),
        reference_wave(q_r, sigma),
        dt,
    ))
}

/// Storage snapshot at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    /// Robot storages relative to `q_r`.
    pub robot: Vec<f64>,
    /// Channel storage per edge; zero when no channel is modelled.
    pub channel: Vec<f64>,
    /// `(sum robot + sum channel) / m`.
    pub total: f64,
    /// Running `int (-z_bar . u_h - eps |z_bar|^2) dt`.
    pub human: f64,
    /// `total + human`; the constant offset of the convergence argument is dropped.
    pub energy: f64,
}

impl EnergyLedger {
    pub fn new(robot: Vec<f64>, channel: Vec<f64>, m: usize, human: f64) -> Self {
        let total = (robot.iter().sum::<f64>() + channel.iter().sum::<f64>()) / m as f64;
        Self { robot, channel, total, human, energy: total + human }
    }
}

/// `(S(t + dt) - S(t)) / dt - z_bar . u_h`. Positive values beyond the
/// discretization budget mean the network injected energy.
pub fn passivity_residual(
    before: &EnergyLedger,
    after: &EnergyLedger,
    z_bar: Vec2,
    u_h: Vec2,
    dt: f64,
) -> f64 {
    (after.total - before.total) / dt - z_bar.dot(u_h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    pub tolerance: f64,
    /// Abort the run at the first violation instead of logging it.
    pub fail_fast: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { tolerance: DEFAULT_RESIDUAL_TOLERANCE, fail_fast: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    /// Index of the record at the end of the offending step.
    pub step: usize,
    pub t: f64,
    pub residual: f64,
    pub tolerance: f64,
}

/// Proof diagnostics for one edge at one instant:
/// `e_ij = -(1/sigma) {(r_ij^q - q_i)(t) + (r_ji^q - q_j)(t - T)}` and its mirror.
pub fn edge_errors(log: &TrajectoryLog, record: usize) -> Option<Vec<(f64, f64)>> {
    let lag = log.lag_steps;
    let now = log.records.get(record)?;
    let past = log.records.get(record.checked_sub(lag)?)?;
    let inv = 1.0 / log.sigma;
    let out = log
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let cur = &now.edges[e];
            let old = &past.edges[e];
            let gap_ij = cur.r_ij.q() - now.q[i];
            let gap_ji = cur.r_ji.q() - now.q[j];
            let old_ij = old.r_ij.q() - past.q[i];
            let old_ji = old.r_ji.q() - past.q[j];
            let e_ij = -inv * (gap_ij + old_ji);
            let e_ji = -inv * (gap_ji + old_ij);
            (e_ij.norm(), e_ji.norm())
        })
        .collect();
    Some(out)
}

/// Largest `|e_ij|` over all edges and both directions at `record`.
pub fn max_edge_error(log: &TrajectoryLog, record: usize) -> Option<f64> {
    edge_errors(log, record).map(|v| v.iter().fold(0.0, |m, &(a, b)| f64::max(m, f64::max(a, b))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// First time after which `max_i |q_i - q_r| < ARRIVAL_TOLERANCE` holds
    /// for the rest of the run.
    pub arrival_time: Option<f64>,
    /// First time `max_i |q_i - q_r| < ARRIVAL_TOLERANCE` holds at all.
    pub first_entry_time: Option<f64>,
    /// `sum_k |u_h(k+1) - u_h(k)|`.
    pub input_total_variation: f64,
    /// Largest pairwise distance `|q_i - q_j|` over the run.
    pub max_sync_error: f64,
    /// `max_i |q_i - q_r|` at the last record.
    pub final_error: f64,
    /// `|z - q_r|` at the last record.
    pub final_z_error: f64,
    pub max_residual: Option<f64>,
    pub violations: usize,
    /// Largest `|e_ij|` at the last record, when the log is long enough.
    pub final_edge_error: Option<f64>,
    /// `int (q_r - z) . u_h dt`.
    pub operator_supply: f64,
    /// `int |q_r - z|^2 dt`.
    pub error_energy: f64,
}

fn max_error(q: &[Vec2], q_r: Vec2) -> f64 {
    q.iter().fold(0.0, |m, &p| f64::max(m, (p - q_r).norm()))
}

pub fn compute_metrics(log: &TrajectoryLog, q_r: Vec2) -> Metrics {
    let mut arrival_time = None;
    let mut first_entry_time = None;
    let mut tv = 0.0;
    let mut max_sync: f64 = 0.0;
    let mut max_residual: Option<f64> = None;
    let mut supply = 0.0;
    let mut error_energy = 0.0;

    for (k, rec) in log.records.iter().enumerate() {
        let inside = max_error(&rec.q, q_r) < ARRIVAL_TOLERANCE;
        if inside {
            arrival_time.get_or_insert(rec.t);
            first_entry_time.get_or_insert(rec.t);
        } else {
            arrival_time = None;
        }
        if let Some(next) = log.records.get(k + 1) {
            tv += (next.u_h - rec.u_h).norm();
            let err = q_r - rec.z;
            supply += log.dt * err.dot(rec.u_h);
            error_energy += log.dt * err.norm_sq();
        }
        for (a, &qa) in rec.q.iter().enumerate() {
            for &qb in &rec.q[a + 1..] {
                max_sync = max_sync.max((qa - qb).norm());
            }
        }
        if let Some(r) = rec.residual {
            max_residual = Some(max_residual.map_or(r, |m| m.max(r)));
        }
    }

    let (final_error, final_z_error, final_edge_error) = match log.records.last() {
        Some(last) => (
            max_error(&last.q, q_r),
            (last.z - q_r).norm(),
            max_edge_error(log, log.records.len() - 1),
        ),
        None => (f64::NAN, f64::NAN, None),
    };

    Metrics {
        arrival_time,
        first_entry_time,
        input_total_variation: tv,
        max_sync_error: max_sync,
        final_error,
        final_z_error,
        max_residual,
        violations: log.violations.len(),
        final_edge_error,
        operator_supply: supply,
        error_energy,
    }
}
