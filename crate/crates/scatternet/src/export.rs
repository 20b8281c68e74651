//! Run artifacts: trajectory CSV, metrics summary and violation report.
//!
//! Trajectory CSV columns, in order (agent numbers are 1-based):
//!
//! | column | meaning |
//! |---|---|
//! | `step`, `t` | step index and simulation time (s) |
//! | `z_x`, `z_y` | average position of the accessible robots |
//! | `u_x`, `u_y` | operator command applied during this step |
//! | `q{i}_x`, `q{i}_y`, `xi{i}_x`, `xi{i}_y` | per agent, for `i = 1..=n` |
//! | `storage` | total network storage `S` |
//! | `human` | running operator energy integral `H` |
//! | `energy` | `U = S + H` |
//! | `residual` | passivity residual of the step ending here; empty on the first row |
//!
//! Numbers are written in shortest round-trip form, so a CSV read back
//! reproduces the logged values bit for bit.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use scatternet_core::monitor::{compute_metrics, ARRIVAL_TOLERANCE};
use scatternet_core::{Metrics, Mode, TrajectoryLog, Violation};

use crate::error::{Error, Result};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TEXT: &str = "metrics.txt";
pub const VIOLATIONS_FILE: &str = "violations.csv";

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["step", "t", "z_x", "z_y", "u_x", "u_y"].iter().map(|s| s.to_string()).collect();
    for i in 1..=n {
        for c in ["q", "xi"] {
            cols.push(format!("{c}{i}_x"));
            cols.push(format!("{c}{i}_y"));
        }
    }
    cols.extend(["storage", "human", "energy", "residual"].iter().map(|s| s.to_string()));
    cols
}

pub fn write_trajectory<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let n = log.records.first().map_or(0, |r| r.q.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n))?;
    let mut row: Vec<String> = Vec::with_capacity(10 + 4 * n);
    for rec in &log.records {
        row.clear();
        row.push(rec.step.to_string());
        for v in [rec.t, rec.z.x, rec.z.y, rec.u_h.x, rec.u_h.y] {
            row.push(v.to_string());
        }
        for (q, xi) in rec.q.iter().zip(&rec.xi) {
            for v in [q.x, q.y, xi.x, xi.y] {
                row.push(v.to_string());
            }
        }
        for v in [rec.ledger.total, rec.ledger.human, rec.ledger.energy] {
            row.push(v.to_string());
        }
        row.push(rec.residual.map(|r| r.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<trajectory>", e))?;
    Ok(())
}

pub fn write_violations<W: Write>(violations: &[Violation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "t", "residual", "tolerance"])?;
    for v in violations {
        w.write_record([v.step.to_string(), v.t.to_string(), v.residual.to_string(), v.tolerance.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<violations>", e))?;
    Ok(())
}

/// Machine-readable run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: Option<String>,
    pub mode: String,
    pub delay: f64,
    pub dt: f64,
    pub steps: usize,
    /// Persistent arrival: from here on every robot stays within the tolerance.
    pub arrival_time: Option<f64>,
    pub first_entry_time: Option<f64>,
    pub arrival_tolerance: f64,
    pub input_total_variation: f64,
    pub max_sync_error: f64,
    pub final_error: f64,
    pub final_z_error: f64,
    pub final_edge_error: Option<f64>,
    pub max_residual: Option<f64>,
    pub violations: usize,
    pub operator_supply: f64,
    pub error_energy: f64,
    pub converged: bool,
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::DelayFree => "delay_free",
        Mode::Scattering => "scattering",
        Mode::RawDelay => "raw_delay",
    }
}

impl Summary {
    pub fn new(log: &TrajectoryLog, name: Option<String>, delay: f64) -> Self {
        let m: Metrics = compute_metrics(log, log.q_r);
        Self {
            name,
            mode: mode_name(log.mode).to_string(),
            delay,
            dt: log.dt,
            steps: log.records.len().saturating_sub(1),
            arrival_time: m.arrival_time,
            first_entry_time: m.first_entry_time,
            arrival_tolerance: ARRIVAL_TOLERANCE,
            input_total_variation: m.input_total_variation,
            max_sync_error: m.max_sync_error,
            final_error: m.final_error,
            final_z_error: m.final_z_error,
            final_edge_error: m.final_edge_error,
            max_residual: m.max_residual,
            violations: m.violations,
            operator_supply: m.operator_supply,
            error_energy: m.error_energy,
            converged: m.final_error < ARRIVAL_TOLERANCE,
        }
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>, unit: &str| v.map_or_else(|| "never".to_string(), |x| format!("{x:.2}{unit}"));
        let mut s = String::new();
        if let Some(name) = &self.name {
            s += &format!("scenario            {name}\n");
        }
        s += &format!("mode                {} (T = {} s, dt = {} s, {} steps)\n", self.mode, self.delay, self.dt, self.steps);
        s += &format!("arrival time        {}\n", opt(self.arrival_time, " s"));
        s += &format!("first entry         {}\n", opt(self.first_entry_time, " s"));
        s += &format!("final max error     {:.4} m\n", self.final_error);
        s += &format!("final |z - q_r|     {:.4} m\n", self.final_z_error);
        s += &format!(
            "final max |e_ij|    {}\n",
            self.final_edge_error.map_or_else(|| "n/a".to_string(), |e| format!("{e:.4}"))
        );
        s += &format!("max sync error      {:.4} m\n", self.max_sync_error);
        s += &format!("input variation     {:.4} m/s\n", self.input_total_variation);
        s += &format!(
            "max residual        {}\n",
            self.max_residual.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3e}"))
        );
        s += &format!("violations          {}\n", self.violations);
        s
    }
}

/// Writes trajectory, summary (text and JSON) and violations into `dir`.
pub fn write_artifacts(dir: &Path, log: &TrajectoryLog, summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| Error::io(p, e))
    };
    write_trajectory(log, create(TRAJECTORY_FILE)?)?;
    write_violations(&log.violations, create(VIOLATIONS_FILE)?)?;
    serde_json::to_writer_pretty(create(METRICS_JSON)?, summary)?;
    create(METRICS_TEXT)?
        .write_all(summary.to_text().as_bytes())
        .map_err(|e| Error::io(dir.join(METRICS_TEXT), e))?;
    Ok(())
}
