//! Live sessions: the stepping loop, the websocket endpoint and recording.
//!
//! Three parties share a [`Shared`] block. The stepping loop runs on its own
//! thread and is the only owner of the world. Connection tasks drop commands
//! into a last-writer-wins slot and never wait on the loop. Feedback leaves
//! through a watch channel holding the latest frame, so a slow client only
//! ever misses frames and never slows the loop.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::{mpsc, watch};

use scatternet_core::operator::{CommandSample, CommandSource, LiveAdapter, Observation, Operator};
use scatternet_core::simulator::{Recorder, Simulator};
use scatternet_core::{OperatorSpec, Scenario, Vec2};

use crate::error::{Error, Result};
use crate::protocol::{
    parse_inbound, DebugFields, ErrorCode, Inbound, Outbound, ProtocolError, RobotView, RunState, StateFrame,
    StorageView, WaveView, PROTOCOL_VERSION,
};
use crate::record::{CommandEntry, RecordKind, SessionRecord};
use crate::scenario::{ScenarioFile, SCHEMA_VERSION};

pub const DEFAULT_FEEDBACK_RATE: f64 = 30.0;
/// Commands closer together than this are coalesced to the latest.
pub const MIN_COMMAND_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViewMode {
    /// Only what the operator is meant to see: `z`, `q_r` and the accessible robots.
    #[default]
    Operator,
    Debug,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// Simulation time runs `speed` times faster than the wall clock.
    RealTime { speed: f64 },
    AsFastAsPossible,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub scenario: ScenarioFile,
    pub port: u16,
    pub feedback_rate: f64,
    pub view: ViewMode,
    pub record: Option<PathBuf>,
    pub pacing: Pacing,
    /// Start stepping without waiting for a `start` message.
    pub autostart: bool,
}

impl SessionConfig {
    pub fn new(scenario: ScenarioFile) -> Self {
        Self {
            scenario,
            port: 0,
            feedback_rate: DEFAULT_FEEDBACK_RATE,
            view: ViewMode::Operator,
            record: None,
            pacing: Pacing::RealTime { speed: 1.0 },
            autostart: false,
        }
    }

    /// The scenario with its operator replaced by the live adapter.
    fn live_scenario(&self) -> Result<(Scenario, LiveAdapter)> {
        let mut sc = self.scenario.to_scenario(None)?;
        let (hold, u_max) = match sc.operator {
            OperatorSpec::Live { hold_timeout, u_max } => (hold_timeout, u_max),
            _ => (
                scatternet_core::operator::DEFAULT_HOLD_TIMEOUT,
                scatternet_core::operator::DEFAULT_U_MAX,
            ),
        };
        sc.operator = OperatorSpec::Live { hold_timeout: hold, u_max };
        let rate_limit = 1.0 / sc.dt;
        if !(self.feedback_rate > 0.0 && self.feedback_rate <= rate_limit) {
            return Err(Error::bad(
                "session",
                format!("feedback rate {} Hz must be in (0, {rate_limit}] for dt = {}", self.feedback_rate, sc.dt),
            ));
        }
        Ok((sc, LiveAdapter::new(hold, u_max)))
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingCommand {
    u: Vec2,
    client_t: Option<f64>,
}

struct Shared {
    command: Mutex<Option<PendingCommand>>,
    control: Mutex<Vec<Inbound>>,
    frames: watch::Sender<Option<Arc<StateFrame>>>,
    status: watch::Sender<Outbound>,
    record: Mutex<Option<SessionRecord>>,
    operator_connected: AtomicBool,
    shutdown: AtomicBool,
    view: ViewMode,
}

/// A running session server.
pub struct SessionServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stepper: Option<thread::JoinHandle<()>>,
    server: tokio::task::JoinHandle<()>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
}

impl SessionServer {
    /// Binds the port and starts the stepping loop and the websocket endpoint
    /// (`/ws`, also served at `/`).
    pub async fn start(config: SessionConfig) -> Result<Self> {
        let (scenario, adapter) = config.live_scenario()?;
        let addr = SocketAddr::from(([127, 0, 0, 1], config.port));
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => Error::PortInUse { port: config.port },
            _ => Error::io(format!("bind {addr}"), e),
        })?;
        let addr = listener.local_addr().map_err(|e| Error::io("local address", e))?;

        let initial = Outbound::Status { v: PROTOCOL_VERSION, state: RunState::Paused, t: 0.0, step: 0 };
        let shared = Arc::new(Shared {
            command: Mutex::new(None),
            control: Mutex::new(if config.autostart { vec![Inbound::Start] } else { Vec::new() }),
            frames: watch::channel(None).0,
            status: watch::channel(initial).0,
            record: Mutex::new(None),
            operator_connected: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            view: config.view,
        });

        let stepper = {
            let shared = shared.clone();
            let config = config.clone();
            thread::Builder::new()
                .name("session-stepper".into())
                .spawn(move || stepping_loop(&config, scenario, adapter, &shared))
                .map_err(|e| Error::io("stepper thread", e))?
        };

        let app = Router::new()
            .route("/", get(upgrade))
            .route("/ws", get(upgrade))
            .with_state(shared.clone());
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stopped.await;
                })
                .await;
        });
        Ok(Self { addr, shared, stepper: Some(stepper), server, stop: Some(stop) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits until the session has run its full duration.
    pub async fn wait_done(&self) {
        let mut rx = self.shared.status.subscribe();
        let _ = rx
            .wait_for(|s| matches!(s, Outbound::Status { state: RunState::Done, .. }))
            .await;
    }

    /// The record of the last finished session, if any.
    pub fn record(&self) -> Option<SessionRecord> {
        self.shared.record.lock().expect("record lock").clone()
    }

    /// Stops the loop (finalizing the record of a session in progress) and
    /// the endpoint.
    pub async fn shutdown(mut self) -> Option<SessionRecord> {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.stepper.take() {
            let _ = tokio::task::spawn_blocking(move || h.join()).await;
        }
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        // open sockets would hold a graceful shutdown forever
        if tokio::time::timeout(Duration::from_secs(1), &mut self.server).await.is_err() {
            self.server.abort();
        }
        self.record()
    }
}

impl Drop for SessionServer {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn connection(mut socket: WebSocket, shared: Arc<Shared>) {
    if shared.operator_connected.swap(true, Ordering::SeqCst) {
        let err = ProtocolError {
            code: ErrorCode::SecondOperatorRejected,
            message: "another operator is connected".into(),
        };
        let _ = socket.send(Message::Text(Outbound::error(&err).to_json().into())).await;
        let _ = socket.send(Message::Close(None)).await;
        return;
    }

    let (mut sink, mut stream) = socket.split();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<Outbound>();
    let mut frames = shared.frames.subscribe();
    let mut status = shared.status.subscribe();
    let view = shared.view;

    let writer = tokio::spawn(async move {
        let current = status.borrow_and_update().clone();
        if sink.send(Message::Text(current.to_json().into())).await.is_err() {
            return;
        }
        loop {
            let out = tokio::select! {
                changed = frames.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    let Some(frame) = frames.borrow_and_update().clone() else { continue };
                    match view {
                        ViewMode::Debug => Outbound::State(Box::new((*frame).clone())),
                        ViewMode::Operator => Outbound::State(Box::new(frame.operator_view())),
                    }
                }
                changed = status.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    status.borrow_and_update().clone()
                }
                reply = reply_rx.recv() => match reply {
                    Some(r) => r,
                    None => break,
                },
            };
            if sink.send(Message::Text(out.to_json().into())).await.is_err() {
                break;
            }
        }
    });

    let mut last_command: Option<Instant> = None;
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            Message::Binary(_) => {
                let err = ProtocolError { code: ErrorCode::MalformedMessage, message: "binary frames are not accepted".into() };
                let _ = reply_tx.send(Outbound::error(&err));
                continue;
            }
            _ => continue,
        };
        match parse_inbound(text.as_str()) {
            Ok(Inbound::Command { u, client_t }) => {
                let now = Instant::now();
                let burst = last_command.is_some_and(|t| now.duration_since(t) < MIN_COMMAND_INTERVAL);
                last_command = Some(now);
                let replaced = shared
                    .command
                    .lock()
                    .expect("command lock")
                    .replace(PendingCommand { u, client_t })
                    .is_some();
                let _ = reply_tx.send(Outbound::Ack { v: PROTOCOL_VERSION, t: client_t, coalesced: replaced || burst });
            }
            Ok(control) => shared.control.lock().expect("control lock").push(control),
            Err(e) => {
                let _ = reply_tx.send(Outbound::error(&e));
            }
        }
    }
    drop(reply_tx);
    writer.abort();
    shared.operator_connected.store(false, Ordering::SeqCst);
}

struct Run<'s, 'a> {
    recorder: Recorder<'s, 'a>,
    world: scatternet_core::WorldState,
    adapter: LiveAdapter,
    samples: Vec<CommandEntry>,
    last_residual: Option<f64>,
}

fn stepping_loop(config: &SessionConfig, scenario: Scenario, adapter: LiveAdapter, shared: &Shared) {
    let sim = Simulator::new(&scenario).expect("scenario was validated");
    let dt = scenario.dt;
    let steps = scenario.steps();
    let stride = ((1.0 / (config.feedback_rate * dt)).round() as usize).max(1);
    let fresh = |adapter: &LiveAdapter| Run {
        recorder: Recorder::new(&sim, 0.0),
        world: sim.initial_world(),
        adapter: adapter.clone(),
        samples: Vec::new(),
        last_residual: None,
    };
    let mut run = fresh(&adapter);
    let mut state = RunState::Paused;
    // wall-clock anchor: (instant, step) at the last (re)start
    let mut anchor = (Instant::now(), 0usize);
    let publish_status = |state: RunState, run: &Run| {
        shared.status.send_replace(Outbound::Status {
            v: PROTOCOL_VERSION,
            state,
            t: run.world.t,
            step: run.world.step,
        });
    };
    publish(shared, config, &sim, &run, None);

    loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            if state != RunState::Done && run.world.step > 0 {
                finalize(shared, config, &run);
            }
            return;
        }
        let controls: Vec<Inbound> = std::mem::take(&mut *shared.control.lock().expect("control lock"));
        for c in controls {
            match c {
                Inbound::Start if state == RunState::Paused => {
                    state = RunState::Running;
                    anchor = (Instant::now(), run.world.step);
                    publish_status(state, &run);
                }
                Inbound::Pause if state == RunState::Running => {
                    state = RunState::Paused;
                    publish_status(state, &run);
                }
                Inbound::Reset => {
                    run = fresh(&adapter);
                    shared.command.lock().expect("command lock").take();
                    state = RunState::Paused;
                    publish_status(state, &run);
                    publish(shared, config, &sim, &run, None);
                }
                _ => {}
            }
        }
        if state != RunState::Running {
            thread::sleep(Duration::from_millis(5));
            continue;
        }

        if let Some(cmd) = shared.command.lock().expect("command lock").take() {
            let t = run.world.t;
            if run.adapter.push(CommandSample { u: cmd.u, t, source: CommandSource::Live }) {
                run.samples.push(CommandEntry { step: run.world.step, t, client_t: cmd.client_t, u: cmd.u.to_array() });
            }
        }
        let z = sim.accessible_average(&run.world);
        let obs = Observation { step: run.world.step, t: run.world.t, z, q_r: scenario.q_r };
        let u_h = run.adapter.command(&obs);
        let outcome = sim.evaluate(&run.world, u_h).map_err(Error::from).and_then(|eval| {
            run.recorder.record(&run.world, z, u_h, &eval)?;
            run.last_residual = run.recorder.log().records.last().and_then(|r| r.residual);
            if run.world.step >= steps {
                return Ok(true);
            }
            sim.apply(&mut run.world, &eval)?;
            Ok(false)
        });
        match outcome {
            Ok(false) => {
                if run.world.step % stride == 0 {
                    publish(shared, config, &sim, &run, run.last_residual);
                }
            }
            Ok(true) | Err(_) => {
                publish(shared, config, &sim, &run, run.last_residual);
                finalize(shared, config, &run);
                state = RunState::Done;
                publish_status(state, &run);
                continue;
            }
        }

        if let Pacing::RealTime { speed } = config.pacing {
            let sim_elapsed = (run.world.step - anchor.1) as f64 * dt / speed;
            let due = anchor.0 + Duration::from_secs_f64(sim_elapsed);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
    }
}

fn finalize(shared: &Shared, config: &SessionConfig, run: &Run) {
    let mut snapshot = config.scenario.clone();
    snapshot.v = SCHEMA_VERSION;
    snapshot.operator = crate::scenario::OperatorFile::Live {
        hold_timeout: run.adapter.hold_timeout(),
        u_max: run.adapter.u_max(),
    };
    let record = SessionRecord::new(RecordKind::Live, &snapshot, run.recorder.log(), run.samples.clone());
    if let Some(path) = &config.record {
        if let Err(e) = record.save(path) {
            eprintln!("session record not written: {e}");
        }
    }
    *shared.record.lock().expect("record lock") = Some(record);
}

fn publish(shared: &Shared, config: &SessionConfig, sim: &Simulator, run: &Run, residual: Option<f64>) {
    let sc = sim.scenario();
    let world = &run.world;
    let eta = |i: usize| sc.biases.real_position(i, world.states[i].q).to_array();
    let debug = (config.view == ViewMode::Debug).then(|| {
        let ledger = sim.ledger(world, run.recorder.log().records.last().map_or(0.0, |r| r.ledger.human));
        DebugFields {
            robots: (0..sc.graph.n())
                .map(|i| RobotView { q: world.states[i].q.to_array(), xi: world.states[i].xi.to_array(), eta: eta(i) })
                .collect(),
            waves: sc
                .graph
                .edges()
                .iter()
                .zip(&world.channels)
                .map(|(&(i, j), ch)| WaveView {
                    edge: [i + 1, j + 1],
                    s_plus: ch.forward.due().unwrap_or_default().0,
                    s_minus: ch.backward.due().unwrap_or_default().0,
                })
                .collect(),
            storage: StorageView {
                total: ledger.total,
                human: ledger.human,
                energy: ledger.energy,
                robots: ledger.robot,
                channels: ledger.channel,
            },
            residual,
        }
    });
    let frame = StateFrame {
        v: PROTOCOL_VERSION,
        kind: "state".into(),
        t: world.t,
        z: sim.accessible_average(world).to_array(),
        qr: sc.q_r.to_array(),
        eta_h: sc.graph.accessible().iter().map(|&i| eta(i)).collect(),
        obstacles: config.scenario.obstacles.clone(),
        debug,
    };
    shared.frames.send_replace(Some(Arc::new(frame)));
}
