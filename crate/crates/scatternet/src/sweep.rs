//! Parameter sweeps over a base scenario.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scatternet_core::simulator;

use crate::error::{Error, Result};
use crate::export::Summary;
use crate::scenario::{OperatorFile, ScenarioFile};

/// Largest Cartesian product run without `--force`.
pub const MAX_RUNS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    /// Channel delay `T`.
    Delay,
    A,
    B,
    Sigma,
    /// Proportional operator gain `K`.
    Gain,
    Dt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub param: Param,
    pub values: Vec<f64>,
}

impl FromStr for Axis {
    type Err = Error;

    /// `NAME=v1,v2,...` with `NAME` one of `T`, `a`, `b`, `sigma`, `K`, `dt`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, list) = s.split_once('=').ok_or_else(|| Error::BadAxis(format!("{s}: expected NAME=v1,v2,...")))?;
        let param = match name.trim() {
            "T" | "delay" => Param::Delay,
            "a" => Param::A,
            "b" => Param::B,
            "sigma" => Param::Sigma,
            "K" | "gain" => Param::Gain,
            "dt" => Param::Dt,
            other => return Err(Error::BadAxis(format!("unknown parameter {other}"))),
        };
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::BadAxis(format!("{name}: bad value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::BadAxis(format!("{name}: no values")));
        }
        Ok(Axis { param, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ScenarioFile,
    pub axes: Vec<Axis>,
}

impl SweepSpec {
    pub fn run_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Every point of the Cartesian product, last axis fastest.
    pub fn points(&self) -> Vec<Vec<(Param, f64)>> {
        let mut points = vec![Vec::new()];
        for axis in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push((axis.param, v));
                        q
                    })
                })
                .collect();
        }
        points
    }
}

fn apply(base: &ScenarioFile, point: &[(Param, f64)]) -> std::result::Result<ScenarioFile, String> {
    let mut f = base.clone();
    for &(param, v) in point {
        match param {
            Param::Delay => f.delay = v,
            Param::Dt => f.dt = v,
            Param::Sigma => f.gains.sigma = v,
            Param::A | Param::B if f.gains.per_edge.is_some() => {
                return Err("a and b cannot be swept over per-edge gains".into())
            }
            Param::A => f.gains.a = Some(v),
            Param::B => f.gains.b = Some(v),
            Param::Gain => match &mut f.operator {
                OperatorFile::Proportional { gain, .. } => *gain = v,
                _ => return Err("K applies only to the proportional operator".into()),
            },
        }
    }
    Ok(f)
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub delay: f64,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub sigma: f64,
    pub gain: Option<f64>,
    pub dt: f64,
    pub arrival_time: Option<f64>,
    pub first_entry_time: Option<f64>,
    pub input_total_variation: Option<f64>,
    pub max_residual: Option<f64>,
    pub violations: Option<usize>,
    pub converged: bool,
    pub error: Option<String>,
}

fn run_point(index: usize, base: &ScenarioFile, base_dir: Option<&Path>, point: &[(Param, f64)]) -> SweepRow {
    let file = apply(base, point);
    let mut row = {
        let f = file.as_ref().unwrap_or(base);
        SweepRow {
            index,
            delay: f.delay,
            a: f.gains.a,
            b: f.gains.b,
            sigma: f.gains.sigma,
            gain: match f.operator {
                OperatorFile::Proportional { gain, .. } => Some(gain),
                _ => None,
            },
            dt: f.dt,
            arrival_time: None,
            first_entry_time: None,
            input_total_variation: None,
            max_residual: None,
            violations: None,
            converged: false,
            error: None,
        }
    };
    let outcome = file.and_then(|f| {
        let sc = f.to_scenario(base_dir).map_err(|e| e.to_string())?;
        let log = simulator::run(&sc).map_err(|e| e.to_string())?;
        Ok(Summary::new(&log, f.name.clone(), f.delay))
    });
    match outcome {
        Ok(s) => {
            row.arrival_time = s.arrival_time;
            row.first_entry_time = s.first_entry_time;
            row.input_total_variation = Some(s.input_total_variation);
            row.max_residual = s.max_residual;
            row.violations = Some(s.violations);
            row.converged = s.converged;
        }
        Err(e) => row.error = Some(e),
    }
    row
}

/// Runs every point in parallel. Rows come back in point order; a failing
/// point is recorded in its row and does not stop the sweep.
pub fn run(spec: &SweepSpec, base_dir: Option<&Path>, force: bool) -> Result<Vec<SweepRow>> {
    let runs = spec.run_count();
    if runs > MAX_RUNS && !force {
        return Err(Error::SweepTooLarge { runs, limit: MAX_RUNS });
    }
    let points = spec.points();
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(k, p)| run_point(k, &spec.base, base_dir, p))
        .collect())
}

pub fn write_rows<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<sweep>", e))?;
    Ok(())
}
