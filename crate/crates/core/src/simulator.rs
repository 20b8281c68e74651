//! Fixed-step closed-loop simulation: robots, controllers, scattering
//! channels and the operator, integrated with explicit Euler.
//!
//! Network semantics are synchronous. Within a step every endpoint reads the
//! wave that leaves its delay line at this step, solves for its references,
//! and the waves it emits enter the lines at the end of the step. A line of
//! depth `D` therefore delivers a wave `D` steps after it was emitted; a zero
//! delay is realized as one step of latency.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::controller::{delay_free_derivatives, feedback_derivatives, ControlOutput};
use crate::model::{average_accessible, Bias, Gains, Graph, ModelError, RobotState};
use crate::monitor::{self, EnergyLedger, MonitorConfig, Violation};
use crate::operator::{Observation, Operator, OperatorError, OperatorSpec};
use crate::scattering::{self, DelayLine, ScatteringError};
use crate::vector::{Vec2, Vec4};

/// Any state component beyond this magnitude aborts the run.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Neighbors read each other's current state.
    DelayFree,
    /// Delayed channels carrying wave variables.
    Scattering,
    /// Delayed channels carrying raw `(q, xi)`. Not passive; kept as a
    /// negative control for the monitor.
    RawDelay,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    Model(ModelError),
    Scattering(ScatteringError),
    Operator(OperatorError),
    InvalidScenario(String),
    NonFiniteCommand { t: f64 },
    NumericBlowup { t: f64 },
    PassivityViolation { t: f64, residual: f64 },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Model(e) => write!(f, "{e}"),
            SimError::Scattering(e) => write!(f, "{e}"),
            SimError::Operator(e) => write!(f, "{e}"),
            SimError::InvalidScenario(msg) => write!(f, "invalid scenario: {msg}"),
            SimError::NonFiniteCommand { t } => write!(f, "non-finite operator command at t = {t}"),
            SimError::NumericBlowup { t } => {
                write!(f, "state exceeded {BLOWUP_LIMIT:e} at t = {t}; the loop is unstable")
            }
            SimError::PassivityViolation { t, residual } => {
                write!(f, "passivity residual {residual:e} at t = {t}")
            }
        }
    }
}

impl From<ModelError> for SimError {
    fn from(e: ModelError) -> Self {
        SimError::Model(e)
    }
}

impl From<ScatteringError> for SimError {
    fn from(e: ScatteringError) -> Self {
        SimError::Scattering(e)
    }
}

impl From<OperatorError> for SimError {
    fn from(e: OperatorError) -> Self {
        SimError::Operator(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: Graph,
    pub gains: Gains,
    /// Channel delay `T` in seconds.
    pub delay: f64,
    pub dt: f64,
    pub duration: f64,
    pub q0: Vec<Vec2>,
    pub xi0: Vec<Vec2>,
    pub q_r: Vec2,
    pub biases: Bias,
    pub operator: OperatorSpec,
    pub mode: Mode,
    pub monitor: MonitorConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.graph.n();
        let bad = |msg: &str| Err(SimError::InvalidScenario(String::from(msg)));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be non-negative");
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return bad("delay must be non-negative");
        }
        if self.gains.edge_count() != self.graph.edges().len() {
            return bad("gains do not match the edge set");
        }
        for (what, len) in [("q0", self.q0.len()), ("xi0", self.xi0.len()), ("biases", self.biases.0.len())] {
            if len != n {
                return Err(ModelError::LengthMismatch { what, expected: n, got: len }.into());
            }
        }
        let finite = self.q0.iter().chain(&self.xi0).chain(&self.biases.0).all(|v| v.is_finite());
        if !finite || !self.q_r.is_finite() {
            return bad("initial state, biases and q_r must be finite");
        }
        if self.mode != Mode::DelayFree {
            scattering::delay_steps(self.delay, self.dt)?;
        }
        self.operator.validate()?;
        Ok(())
    }

    /// Number of Euler steps, `round(duration / dt)`.
    pub fn steps(&self) -> usize {
        libm::round(self.duration / self.dt) as usize
    }

    /// Steps between emission and reception on a channel; zero in delay-free mode.
    pub fn lag_steps(&self) -> usize {
        match self.mode {
            Mode::DelayFree => 0,
            _ => scattering::delay_steps(self.delay, self.dt).map(|d| d.max(1)).unwrap_or(1),
        }
    }
}

/// One channel: `forward` runs from the lower-indexed robot to the higher one.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub forward: DelayLine,
    pub backward: DelayLine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub step: usize,
    pub t: f64,
    pub states: Vec<RobotState>,
    /// One per edge, empty in delay-free mode.
    pub channels: Vec<Channel>,
}

/// Everything exchanged on one edge at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeSignals {
    pub r_ij: Vec4,
    pub p_ij: Vec4,
    pub r_ji: Vec4,
    pub p_ji: Vec4,
    /// `s+` emitted by the lower-indexed robot.
    pub s_plus: Vec4,
    /// `s-` emitted by the higher-indexed robot.
    pub s_minus: Vec4,
}

/// Right-hand side of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub edges: Vec<EdgeSignals>,
    pub derivatives: Vec<ControlOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub q: Vec<Vec2>,
    pub xi: Vec<Vec2>,
    pub z: Vec2,
    /// Command applied over `[t, t + dt)`.
    pub u_h: Vec2,
    pub edges: Vec<EdgeSignals>,
    pub ledger: EnergyLedger,
    /// Residual of the step that ended at this record.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub q_r: Vec2,
    pub sigma: f64,
    pub mode: Mode,
    pub lag_steps: usize,
    pub edges: Vec<(usize, usize)>,
    pub passivity_margin: f64,
    pub records: Vec<StepRecord>,
    pub violations: Vec<Violation>,
}

impl TrajectoryLog {
    /// Applied commands, one per record, for replay.
    pub fn commands(&self) -> Vec<Vec2> {
        self.records.iter().map(|r| r.u_h).collect()
    }
}

pub struct Simulator<'a> {
    scenario: &'a Scenario,
    lag: usize,
    s_q: Vec4,
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        Ok(Self {
            scenario,
            lag: scenario.lag_steps(),
            s_q: monitor::reference_wave(scenario.q_r, scenario.gains.sigma()),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    /// World at `t = 0`: scenario initial states, zero waves in flight, and
    /// (raw mode) the initial states as neighbor pre-history.
    pub fn initial_world(&self) -> WorldState {
        let sc = self.scenario;
        let states: Vec<RobotState> =
            sc.q0.iter().zip(&sc.xi0).map(|(&q, &xi)| RobotState::new(q, xi)).collect();
        let channels = match sc.mode {
            Mode::DelayFree => Vec::new(),
            Mode::Scattering | Mode::RawDelay => sc
                .graph
                .edges()
                .iter()
                .map(|&(i, j)| {
                    let mut forward = DelayLine::with_depth(self.lag, sc.dt);
                    let mut backward = DelayLine::with_depth(self.lag, sc.dt);
                    if sc.mode == Mode::RawDelay {
                        forward.fill(states[i].stacked());
                        backward.fill(states[j].stacked());
                    }
                    Channel { forward, backward }
                })
                .collect(),
        };
        WorldState { step: 0, t: 0.0, states, channels }
    }

    /// Consensus equilibrium: every agent at `(q, xi)` and every channel
    /// filled with the stationary waves of that state.
    pub fn equilibrium_world(&self, q: Vec2, xi: Vec2) -> WorldState {
        let mut world = self.initial_world();
        let x = Vec4::from_parts(q, xi);
        for s in world.states.iter_mut() {
            *s = RobotState::new(q, xi);
        }
        let h = libm::sqrt(self.scenario.gains.sigma() / 2.0);
        for ch in world.channels.iter_mut() {
            match self.scenario.mode {
                Mode::Scattering => {
                    ch.forward.fill(h * x);
                    ch.backward.fill(-h * x);
                }
                _ => {
                    ch.forward.fill(x);
                    ch.backward.fill(x);
                }
            }
        }
        world
    }

    /// Solves every endpoint and evaluates the control law without advancing.
    pub fn evaluate(&self, world: &WorldState, u_h: Vec2) -> Result<Evaluation, SimError> {
        let sc = self.scenario;
        let graph = &sc.graph;
        if sc.mode == Mode::DelayFree {
            let derivatives = delay_free_derivatives(&world.states, graph, &sc.gains, u_h);
            let edges = graph
                .edges()
                .iter()
                .enumerate()
                .map(|(e, &(i, j))| {
                    let m = sc.gains.coupling(e);
                    let (xi_, xj) = (world.states[i].stacked(), world.states[j].stacked());
                    EdgeSignals {
                        r_ij: xj,
                        p_ij: m.apply(&(xj - xi_)),
                        r_ji: xi_,
                        p_ji: m.apply(&(xi_ - xj)),
                        ..Default::default()
                    }
                })
                .collect();
            return Ok(Evaluation { edges, derivatives });
        }

        let sigma = sc.gains.sigma();
        let mut mu = vec![Vec4::ZERO; graph.n()];
        let mut edges = Vec::with_capacity(graph.edges().len());
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let m = sc.gains.coupling(e);
            let ch = &world.channels[e];
            let (xi_, xj) = (world.states[i].stacked(), world.states[j].stacked());
            let arriving_at_j = ch.forward.due().unwrap_or(Vec4::ZERO);
            let arriving_at_i = ch.backward.due().unwrap_or(Vec4::ZERO);
            let sig = match sc.mode {
                Mode::Scattering => {
                    let side_i = scattering::solve_endpoint_i(&arriving_at_i, &xi_, m, sigma)?;
                    let side_j = scattering::solve_endpoint_j(&arriving_at_j, &xj, m, sigma)?;
                    EdgeSignals {
                        r_ij: side_i.r,
                        p_ij: side_i.p,
                        r_ji: side_j.r,
                        p_ji: side_j.p,
                        s_plus: side_i.s_out,
                        s_minus: side_j.s_out,
                    }
                }
                _ => EdgeSignals {
                    r_ij: arriving_at_i,
                    p_ij: m.apply(&(arriving_at_i - xi_)),
                    r_ji: arriving_at_j,
                    p_ji: m.apply(&(arriving_at_j - xj)),
                    ..Default::default()
                },
            };
            mu[i] += sig.p_ij;
            mu[j] += sig.p_ji;
            edges.push(sig);
        }
        let derivatives = mu
            .into_iter()
            .enumerate()
            .map(|(i, mu_i)| feedback_derivatives(mu_i, graph.is_accessible(i), u_h))
            .collect();
        Ok(Evaluation { edges, derivatives })
    }

    /// Integrates one Euler step from an evaluation of `world` and pushes the
    /// outgoing waves.
    pub fn apply(&self, world: &mut WorldState, eval: &Evaluation) -> Result<(), SimError> {
        let dt = self.scenario.dt;
        let emitted: Vec<(Vec4, Vec4)> = match self.scenario.mode {
            Mode::DelayFree => Vec::new(),
            Mode::Scattering => eval.edges.iter().map(|s| (s.s_plus, s.s_minus)).collect(),
            Mode::RawDelay => self
                .scenario
                .graph
                .edges()
                .iter()
                .map(|&(i, j)| (world.states[i].stacked(), world.states[j].stacked()))
                .collect(),
        };
        for (s, d) in world.states.iter_mut().zip(&eval.derivatives) {
            s.q += dt * d.q_dot;
            s.xi += dt * d.xi_dot;
        }
        let t_emit = world.t;
        for (ch, (fwd, bwd)) in world.channels.iter_mut().zip(emitted) {
            ch.forward.push_pop(fwd, t_emit)?;
            ch.backward.push_pop(bwd, t_emit)?;
        }
        world.step += 1;
        world.t = world.step as f64 * dt;
        let blown = world
            .states
            .iter()
            .any(|s| {
                let v = s.stacked().max_abs();
                v.is_nan() || v > BLOWUP_LIMIT
            });
        if blown {
            return Err(SimError::NumericBlowup { t: world.t });
        }
        Ok(())
    }

    /// One full step under command `u_h`.
    pub fn step(&self, world: &mut WorldState, u_h: Vec2) -> Result<Evaluation, SimError> {
        if !u_h.is_finite() {
            return Err(SimError::NonFiniteCommand { t: world.t });
        }
        let eval = self.evaluate(world, u_h)?;
        self.apply(world, &eval)?;
        Ok(eval)
    }

    /// Storage snapshot of `world`, with the running human-supply integral.
    pub fn ledger(&self, world: &WorldState, human: f64) -> EnergyLedger {
        let sc = self.scenario;
        let robot = world.states.iter().map(|s| monitor::robot_storage(&s.stacked(), sc.q_r)).collect();
        let channel = match sc.mode {
            Mode::Scattering => world
                .channels
                .iter()
                .map(|ch| {
                    monitor::in_flight_storage(
                        ch.forward.in_flight().map(|w| w.s),
                        ch.backward.in_flight().map(|w| w.s),
                        self.s_q,
                        sc.dt,
                    )
                })
                .collect(),
            _ => vec![0.0; sc.graph.edges().len()],
        };
        EnergyLedger::new(robot, channel, sc.graph.m(), human)
    }

    pub fn accessible_average(&self, world: &WorldState) -> Vec2 {
        let q: Vec<Vec2> = world.states.iter().map(|s| s.q).collect();
        average_accessible(&q, &self.scenario.graph)
    }

    /// Runs the scenario from its initial world with its own operator.
    pub fn run(&self) -> Result<TrajectoryLog, SimError> {
        let mut op = self.scenario.operator.build()?;
        self.run_from(self.initial_world(), &mut *op)
    }

    /// Runs `scenario.steps()` steps from `world`, recording every step.
    pub fn run_from(&self, world: WorldState, op: &mut dyn Operator) -> Result<TrajectoryLog, SimError> {
        let mut recorder = Recorder::new(self, op.passivity_margin());
        let mut world = world;
        let steps = self.scenario.steps();
        loop {
            let z = self.accessible_average(&world);
            let obs = Observation { step: world.step, t: world.t, z, q_r: self.scenario.q_r };
            let u_h = op.command(&obs);
            if !u_h.is_finite() {
                return Err(SimError::NonFiniteCommand { t: world.t });
            }
            let eval = self.evaluate(&world, u_h)?;
            recorder.record(&world, z, u_h, &eval)?;
            if world.step >= steps {
                break;
            }
            self.apply(&mut world, &eval)?;
        }
        Ok(recorder.finish())
    }
}

/// Incremental log builder shared by batch runs and live sessions.
pub struct Recorder<'s, 'a> {
    sim: &'s Simulator<'a>,
    epsilon: f64,
    human: f64,
    prev: Option<(EnergyLedger, Vec2, Vec2)>,
    log: TrajectoryLog,
}

impl<'s, 'a> Recorder<'s, 'a> {
    pub fn new(sim: &'s Simulator<'a>, epsilon: f64) -> Self {
        let sc = sim.scenario;
        let log = TrajectoryLog {
            dt: sc.dt,
            q_r: sc.q_r,
            sigma: sc.gains.sigma(),
            mode: sc.mode,
            lag_steps: sim.lag,
            edges: sc.graph.edges().to_vec(),
            passivity_margin: epsilon,
            records: Vec::with_capacity(sc.steps() + 1),
            violations: Vec::new(),
        };
        Self { sim, epsilon, human: 0.0, prev: None, log }
    }

    /// Appends the record for `world` (pre-step) with the command and
    /// evaluation about to be applied.
    pub fn record(&mut self, world: &WorldState, z: Vec2, u_h: Vec2, eval: &Evaluation) -> Result<(), SimError> {
        let sc = self.sim.scenario;
        let dt = sc.dt;
        if let Some((_, z_bar, u)) = &self.prev {
            self.human += dt * (-z_bar.dot(*u) - self.epsilon * z_bar.norm_sq());
        }
        let ledger = self.sim.ledger(world, self.human);
        let residual = self
            .prev
            .as_ref()
            .map(|(before, z_bar, u)| monitor::passivity_residual(before, &ledger, *z_bar, *u, dt));
        if let Some(r) = residual {
            if r > sc.monitor.tolerance {
                if sc.monitor.fail_fast {
                    return Err(SimError::PassivityViolation { t: world.t, residual: r });
                }
                self.log.violations.push(Violation {
                    step: world.step,
                    t: world.t,
                    residual: r,
                    tolerance: sc.monitor.tolerance,
                });
            }
        }
        self.prev = Some((ledger.clone(), z - sc.q_r, u_h));
        self.log.records.push(StepRecord {
            step: world.step,
            t: world.t,
            q: world.states.iter().map(|s| s.q).collect(),
            xi: world.states.iter().map(|s| s.xi).collect(),
            z,
            u_h,
            edges: eval.edges.clone(),
            ledger,
            residual,
        });
        Ok(())
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    pub fn finish(self) -> TrajectoryLog {
        self.log
    }
}

/// Run a scenario with its own operator.
pub fn run(scenario: &Scenario) -> Result<TrajectoryLog, SimError> {
    Simulator::new(scenario)?.run()
}

/// Run a scenario replaying a recorded command sequence. The energy ledger
/// keeps the passivity margin of the scenario's own operator.
pub fn replay(scenario: &Scenario, commands: Vec<Vec2>) -> Result<TrajectoryLog, SimError> {
    let sim = Simulator::new(scenario)?;
    let margin = scenario.operator.passivity_margin();
    let mut op = crate::operator::Replay { commands, margin };
    sim.run_from(sim.initial_world(), &mut op)
}

/// Settings of the six-robot position-synchronization experiment.
pub mod reference {
    use super::*;

    /// 1-based edges of the default 2x3 grid with one diagonal.
    pub const EDGES: [(usize, usize); 7] = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (1, 6), (2, 5)];
    /// 1-based accessible robots.
    pub const ACCESSIBLE: [usize; 2] = [3, 4];
    pub const A: f64 = 0.2;
    pub const B: f64 = 0.05;
    pub const SIGMA: f64 = 1.0;
    pub const DELAY: f64 = 0.5;
    pub const DT: f64 = 0.01;
    pub const Q_R: Vec2 = Vec2::new(0.55, 0.60);
    pub const Q0: Vec2 = Vec2::new(2.6, 1.6);
    pub const BIASES: [Vec2; 6] = [
        Vec2::new(0.35, 0.175),
        Vec2::new(0.0, 0.175),
        Vec2::new(-0.35, 0.175),
        Vec2::new(-0.35, -0.175),
        Vec2::new(0.0, -0.175),
        Vec2::new(0.35, -0.175),
    ];
    pub const OPERATOR_GAIN: f64 = 0.5;
    pub const U_MAX: f64 = 1.0;
    pub const DURATION: f64 = 300.0;

    pub fn graph() -> Graph {
        let edges: Vec<(usize, usize)> = EDGES.iter().map(|&(i, j)| (i - 1, j - 1)).collect();
        let acc: Vec<usize> = ACCESSIBLE.iter().map(|i| i - 1).collect();
        Graph::new(6, &edges, &acc).expect("reference graph is valid")
    }

    /// The experiment with the proportional synthetic operator.
    pub fn scenario(mode: Mode, delay: f64) -> Scenario {
        let graph = graph();
        let gains = Gains::uniform(&graph, A, B, SIGMA).expect("reference gains are valid");
        Scenario {
            gains,
            delay,
            dt: DT,
            duration: DURATION,
            q0: vec![Q0; 6],
            xi0: vec![Vec2::ZERO; 6],
            q_r: Q_R,
            biases: Bias(BIASES.to_vec()),
            operator: OperatorSpec::Proportional { gain: OPERATOR_GAIN, u_max: U_MAX },
            mode,
            monitor: MonitorConfig::default(),
            graph,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(mode: Mode, delay: f64, duration: f64) -> Scenario {
        let mut sc = reference::scenario(mode, delay);
        sc.duration = duration;
        sc
    }

    #[test]
    fn zero_duration_logs_initial_record_only() {
        let log = run(&short(Mode::Scattering, 0.5, 0.0)).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].t, 0.0);
        assert_eq!(log.records[0].residual, None);
    }

    #[test]
    fn first_step_uses_zero_waves() {
        let sc = short(Mode::Scattering, 0.5, 0.01);
        let sim = Simulator::new(&sc).unwrap();
        let world = sim.initial_world();
        let eval = sim.evaluate(&world, Vec2::ZERO).unwrap();
        let x = world.states[0].stacked();
        let m = sc.gains.coupling(0);
        let r = m.solve_shifted(1.0, &m.apply(&x)).unwrap();
        assert_eq!(eval.edges[0].r_ij, r);
    }

    #[test]
    fn rejects_off_grid_delay() {
        let sc = short(Mode::Scattering, 0.505, 1.0);
        assert!(matches!(Simulator::new(&sc), Err(SimError::Scattering(ScatteringError::NonIntegerDelay { .. }))));
        // delay-free mode ignores the delay grid
        let sc = short(Mode::DelayFree, 0.505, 1.0);
        assert!(Simulator::new(&sc).is_ok());
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut sc = short(Mode::Scattering, 0.5, 1.0);
        sc.q0.pop();
        assert!(matches!(Simulator::new(&sc), Err(SimError::Model(ModelError::LengthMismatch { what: "q0", .. }))));
        let mut sc = short(Mode::Scattering, 0.5, 1.0);
        sc.dt = 0.0;
        assert!(matches!(Simulator::new(&sc), Err(SimError::InvalidScenario(_))));
    }

    #[test]
    fn blowup_is_reported() {
        let mut sc = short(Mode::DelayFree, 0.0, 10.0);
        // Euler is unstable once dt * a * degree is well above 2
        sc.gains = Gains::uniform(&sc.graph, 500.0, 0.05, 1.0).unwrap();
        assert!(matches!(run(&sc), Err(SimError::NumericBlowup { .. })));
    }

    #[test]
    fn fail_fast_stops_on_violation() {
        let mut sc = short(Mode::RawDelay, 0.5, 20.0);
        sc.monitor.fail_fast = true;
        assert!(matches!(run(&sc), Err(SimError::PassivityViolation { .. })));
    }

    #[test]
    fn live_spec_is_not_batch_runnable() {
        let mut sc = short(Mode::Scattering, 0.5, 1.0);
        sc.operator = OperatorSpec::Live { hold_timeout: 0.25, u_max: 1.0 };
        assert!(matches!(run(&sc), Err(SimError::Operator(OperatorError::LiveNotResolvable))));
    }
}
