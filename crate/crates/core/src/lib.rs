//! Cooperative position synchronization of a kinematic robot network driven by
//! a human operator, with inter-robot channels passified by the scattering
//! (wave-variable) transformation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, networking and
//! the command line live in the `scatternet` crate.

#![no_std]

extern crate alloc;

pub mod controller;
pub mod model;
pub mod monitor;
pub mod operator;
pub mod scattering;
pub mod simulator;
mod vector;

pub use controller::{ControlOutput, NeighborReference};
pub use model::{average_accessible, Bias, CouplingMatrix, Gains, Graph, ModelError, RobotState};
pub use monitor::{EnergyLedger, Metrics, MonitorConfig, Violation};
pub use operator::{LiveAdapter, Operator, OperatorError, OperatorSpec, Schedule};
pub use scattering::{DelayLine, ScatteringError, WaveSample};
pub use simulator::{EdgeSignals, Mode, Scenario, SimError, Simulator, StepRecord, TrajectoryLog, WorldState};
pub use vector::{Vec2, Vec4};
