//! Acceptance checks for the primary system. Prints one line per criterion
//! and exits non-zero when any of them fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use futures::SinkExt;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;
use tokio_tungstenite::tungstenite::Message;

use scatternet::record::{RecordKind, SessionRecord};
use scatternet::scenario::{ModeFile, OperatorFile, ScenarioFile};
use scatternet::session::{Pacing, SessionConfig, SessionServer};
use scatternet_core::controller::{delay_free_derivatives, delayed_derivatives};
use scatternet_core::monitor::{compute_metrics, max_edge_error, Metrics};
use scatternet_core::operator::OperatorSpec;
use scatternet_core::scattering::{
    decode_side_i, decode_side_j, encode_side_i, encode_side_j, solve_endpoint_i, solve_endpoint_j,
};
use scatternet_core::simulator::{self, reference, Mode, Scenario, Simulator, TrajectoryLog};
use scatternet_core::{CouplingMatrix, Gains, RobotState, Vec2, Vec4};

type Check = std::result::Result<String, String>;
type CheckFn = fn() -> Check;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(sc: &Scenario) -> std::result::Result<(TrajectoryLog, Metrics), String> {
    let log = simulator::run(sc).map_err(|e| e.to_string())?;
    let m = compute_metrics(&log, sc.q_r);
    Ok((log, m))
}

fn fmt_time(t: Option<f64>) -> String {
    t.map_or("never".into(), |t| format!("{t:.2} s"))
}

fn rel_close(a: &Vec4, b: &Vec4, tol: f64) -> bool {
    (*a - *b).max_abs() <= tol * (1.0 + a.max_abs().max(b.max_abs()))
}

fn random_vec4(rng: &mut StdRng, scale: f64) -> Vec4 {
    Vec4([(); 4].map(|_| rng.random_range(-scale..scale)))
}

fn random_vec2(rng: &mut StdRng, scale: f64) -> Vec2 {
    Vec2::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

fn convergence_delayed() -> Check {
    let sc = reference::scenario(Mode::Scattering, reference::DELAY);
    let clock = Instant::now();
    let (_, m) = run(&sc)?;
    let wall = clock.elapsed();
    let entry = m.first_entry_time.ok_or("robots never got within 0.05 of q_r")?;
    ensure(entry <= 300.0, || format!("first entry at {entry:.2} s"))?;
    ensure(wall < Duration::from_secs(10), || format!("wall clock {wall:?}"))?;
    Ok(format!(
        "within 0.05 at {entry:.2} s, settled {}, final error {:.4}, wall clock {:.2} s",
        fmt_time(m.arrival_time),
        m.final_error,
        wall.as_secs_f64()
    ))
}

fn delay_ordering() -> Check {
    let horizon = 600.0;
    let arrival = |mode, delay| -> std::result::Result<f64, String> {
        let mut sc = reference::scenario(mode, delay);
        sc.duration = horizon;
        run(&sc)?.1.arrival_time.ok_or_else(|| format!("{mode:?} with T = {delay} never settles in {horizon} s"))
    };
    let fast = arrival(Mode::Scattering, 0.0)?;
    let slow = arrival(Mode::Scattering, reference::DELAY)?;
    let free = arrival(Mode::DelayFree, 0.0)?;
    ensure(slow > fast, || format!("T = 0.5 settles at {slow:.2} s, T = 0 at {fast:.2} s"))?;
    ensure(slow > free, || format!("delay-free settles later ({free:.2} s) than T = 0.5 ({slow:.2} s)"))?;
    Ok(format!("settled at {fast:.2} s (T = 0) < {slow:.2} s (T = 0.5), gap {:.2} s; delay-free {free:.2} s", slow - fast))
}

fn passivity_residual() -> Check {
    let sc = reference::scenario(Mode::Scattering, reference::DELAY);
    let tol = sc.monitor.tolerance;
    let (log, m) = run(&sc)?;
    let worst = m.max_residual.ok_or("no residuals recorded")?;
    ensure(log.violations.is_empty() && worst <= tol, || {
        format!("{} violations, worst residual {worst:.3e}", log.violations.len())
    })?;

    let mut zero = sc.clone();
    zero.operator = OperatorSpec::zero();
    let (log0, _) = run(&zero)?;
    let mut rise: f64 = f64::NEG_INFINITY;
    for w in log0.records.windows(2) {
        rise = rise.max(w[1].ledger.total - w[0].ledger.total);
    }
    ensure(rise <= tol * sc.dt, || format!("zero-input storage rose by {rise:.3e} in one step"))?;
    let (first, last) = (log0.records[0].ledger.total, log0.records.last().unwrap().ledger.total);
    Ok(format!(
        "worst residual {worst:.3e} <= {tol}; zero input: largest step change {rise:.3e}, storage {first:.4} -> {last:.4}"
    ))
}

fn negative_control() -> Check {
    let raw = reference::scenario(Mode::RawDelay, reference::DELAY);
    let (log, m) = run(&raw)?;
    ensure(!log.violations.is_empty(), || "raw exchange produced no violations".into())?;
    let raw_worst = m.max_residual.unwrap_or(f64::NAN);

    // stiffer position coupling: the raw exchange loses the damping it gets from scattering
    let at_120 = |mode| -> std::result::Result<(f64, Option<f64>), String> {
        let mut sc = reference::scenario(mode, reference::DELAY);
        sc.gains = Gains::uniform(&sc.graph, 6.0, 0.05, reference::SIGMA).map_err(|e| e.to_string())?;
        let (log, m) = run(&sc)?;
        let k = (120.0 / sc.dt).round() as usize;
        let rec = &log.records[k];
        let err = rec.q.iter().fold(0.0, |acc: f64, &q| acc.max((q - sc.q_r).norm()));
        Ok((err, m.arrival_time))
    };
    let (raw_err, raw_arrival) = at_120(Mode::RawDelay)?;
    let (sc_err, sc_arrival) = at_120(Mode::Scattering)?;
    ensure(raw_err > 5.0 * sc_err, || format!("at a = 6 raw error {raw_err:.4} vs scattering {sc_err:.4}"))?;
    let later = match (raw_arrival, sc_arrival) {
        (None, _) => true,
        (Some(r), Some(s)) => r > s,
        (Some(_), None) => false,
    };
    ensure(later, || format!("raw settles at {} before scattering at {}", fmt_time(raw_arrival), fmt_time(sc_arrival)))?;
    Ok(format!(
        "reference gains: {} violations, worst residual {raw_worst:.3}; a = 6: error at 120 s {raw_err:.4} raw vs {sc_err:.4} scattering, settled {} raw vs {}",
        log.violations.len(),
        fmt_time(raw_arrival),
        fmt_time(sc_arrival)
    ))
}

fn wave_algebra() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5ca7);
    let tol = 1e-10;
    let mut worst: f64 = 0.0;
    for k in 0..100_000 {
        let sigma = rng.random_range(0.05..20.0);
        let (p, r, s, x) = (
            random_vec4(&mut rng, 10.0),
            random_vec4(&mut rng, 10.0),
            random_vec4(&mut rng, 10.0),
            random_vec4(&mut rng, 10.0),
        );
        let m = CouplingMatrix::new(rng.random_range(0.01..10.0), rng.random_range(0.01..10.0)).unwrap();

        let (sp, sm) = encode_side_i(&p, &r, sigma);
        let (p_i, r_i) = decode_side_i(&sp, &sm, sigma);
        let (sp, sm) = encode_side_j(&p, &r, sigma);
        let (p_j, r_j) = decode_side_j(&sp, &sm, sigma);
        let sol_i = solve_endpoint_i(&s, &x, &m, sigma).map_err(|e| e.to_string())?;
        let (_, back_i) = encode_side_i(&sol_i.p, &sol_i.r, sigma);
        let sol_j = solve_endpoint_j(&s, &x, &m, sigma).map_err(|e| e.to_string())?;
        let (back_j, _) = encode_side_j(&sol_j.p, &sol_j.r, sigma);

        for (a, b) in [(&p, &p_i), (&r, &r_i), (&p, &p_j), (&r, &r_j), (&s, &back_i), (&s, &back_j)] {
            let scale = 1.0 + a.max_abs().max(b.max_abs());
            worst = worst.max((*a - *b).max_abs() / scale);
            ensure(rel_close(a, b, tol), || format!("trial {k}: {a:?} vs {b:?}"))?;
        }
    }
    Ok(format!("100000 trials, worst relative mismatch {worst:.2e}"))
}

fn controller_identity() -> Check {
    let mut rng = StdRng::seed_from_u64(0xface);
    let graph = reference::graph();
    let mut worst: f64 = 0.0;
    for k in 0..10_000 {
        let ab: Vec<(f64, f64)> =
            (0..graph.edges().len()).map(|_| (rng.random_range(0.01..5.0), rng.random_range(0.01..5.0))).collect();
        let gains = Gains::per_edge(&graph, &ab, 1.0).unwrap();
        let states: Vec<RobotState> =
            (0..graph.n()).map(|_| RobotState::new(random_vec2(&mut rng, 10.0), random_vec2(&mut rng, 10.0))).collect();
        let u = random_vec2(&mut rng, 2.0);
        let free = delay_free_derivatives(&states, &graph, &gains, u);
        for i in 0..graph.n() {
            let refs = graph.neighbors(i).iter().map(|&(j, e)| (states[j].stacked(), gains.coupling(e)));
            let got = delayed_derivatives(&states[i].stacked(), refs, graph.is_accessible(i), u).stacked();
            let want = free[i].stacked();
            worst = worst.max((got - want).max_abs());
            ensure(rel_close(&got, &want, 1e-12), || format!("state {k}, robot {}: {got:?} vs {want:?}", i + 1))?;
        }
    }
    Ok(format!("10000 random states, worst difference {worst:.2e}"))
}

fn equilibrium() -> Check {
    let mut worst: f64 = 0.0;
    for mode in [Mode::Scattering, Mode::DelayFree] {
        let mut sc = reference::scenario(mode, reference::DELAY);
        sc.duration = 20.0;
        let sim = Simulator::new(&sc).map_err(|e| e.to_string())?;
        let start = sim.equilibrium_world(Vec2::new(1.7, -0.4), Vec2::new(0.3, 0.9));
        let mut world = start.clone();
        for step in 0..1000 {
            sim.step(&mut world, Vec2::ZERO).map_err(|e| e.to_string())?;
            for (a, b) in world.states.iter().zip(&start.states) {
                let d = (a.stacked() - b.stacked()).max_abs();
                worst = worst.max(d);
                ensure(d <= 1e-12, || format!("{mode:?}: drift {d:.2e} after {} steps", step + 1))?;
            }
        }
    }
    Ok(format!("1000 steps with delayed and delay-free exchange, worst drift {worst:.2e}"))
}

fn euler_order() -> Check {
    let state_at_50 = |dt: f64| -> std::result::Result<Vec<f64>, String> {
        let mut sc = reference::scenario(Mode::Scattering, reference::DELAY);
        sc.dt = dt;
        sc.duration = 50.0;
        let (log, _) = run(&sc)?;
        let rec = log.records.last().ok_or("empty log")?;
        ensure((rec.t - 50.0).abs() < 1e-9, || format!("last record at {}", rec.t))?;
        Ok(rec.q.iter().chain(&rec.xi).flat_map(|v| [v.x, v.y]).collect())
    };
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()));
    let (coarse, mid, fine) = (state_at_50(0.01)?, state_at_50(0.005)?, state_at_50(0.0025)?);
    let (d1, d2) = (diff(&coarse, &mid), diff(&mid, &fine));
    let ratio = d1 / d2;
    ensure((1.7..=2.3).contains(&ratio), || format!("ratio {ratio:.3} ({d1:.3e} / {d2:.3e})"))?;
    Ok(format!("differences {d1:.3e} and {d2:.3e}, ratio {ratio:.3}"))
}

async fn live_session() -> std::result::Result<SessionRecord, String> {
    let mut file = ScenarioFile::reference(ModeFile::Scattering, reference::DELAY);
    file.duration = 10.0;
    file.operator = OperatorFile::Live { hold_timeout: 0.25, u_max: 1.0 };
    let mut config = SessionConfig::new(file);
    config.pacing = Pacing::RealTime { speed: 10.0 };
    let server = SessionServer::start(config).await.map_err(|e| e.to_string())?;
    let url = format!("ws://{}/ws", server.local_addr());
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.map_err(|e| e.to_string())?;
    let send = |v: serde_json::Value| Message::text(v.to_string());
    ws.send(send(json!({"type": "start"}))).await.map_err(|e| e.to_string())?;
    for k in 0..80 {
        let a = k as f64 * 0.05;
        let u = [-0.7 + 0.2 * a.sin(), -0.4 * a.cos()];
        ws.send(send(json!({"v": 1, "type": "cmd", "u": u, "t": a}))).await.map_err(|e| e.to_string())?;
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    server.wait_done().await;
    server.shutdown().await.ok_or_else(|| "session produced no record".to_string())
}

fn determinism() -> Check {
    let sc = reference::scenario(Mode::Scattering, reference::DELAY);
    let (first, _) = run(&sc)?;
    let (second, _) = run(&sc)?;
    ensure(first == second, || "two batch runs differ".into())?;
    let replayed = simulator::replay(&sc, first.commands()).map_err(|e| e.to_string())?;
    ensure(replayed == first, || "replayed batch run differs".into())?;

    let file = ScenarioFile::reference(ModeFile::Scattering, reference::DELAY);
    let batch = SessionRecord::new(RecordKind::Batch, &file, &first, Vec::new());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("batch.json");
    batch.save(&path).map_err(|e| e.to_string())?;
    SessionRecord::load(&path).and_then(|r| r.replay()).map_err(|e| e.to_string())?;

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let live = runtime.block_on(live_session())?;
    let moved = live.commands.iter().filter(|u| u[0] != 0.0 || u[1] != 0.0).count();
    ensure(moved > 0, || "the live session applied no commands".into())?;
    let path = dir.path().join("live.json");
    live.save(&path).map_err(|e| e.to_string())?;
    let log = SessionRecord::load(&path).and_then(|r| r.replay()).map_err(|e| e.to_string())?;
    Ok(format!(
        "batch: {} records identical on rerun, replay and disk round trip; live: {} samples, {} nonzero commands, {} records replay bit for bit",
        first.records.len(),
        live.samples.len(),
        moved,
        log.records.len(),
    ))
}

fn proof_diagnostics() -> Check {
    let sc = reference::scenario(Mode::Scattering, reference::DELAY);
    let (log, m) = run(&sc)?;
    let e = max_edge_error(&log, log.records.len() - 1).ok_or("log too short for edge errors")?;
    let z_bar = m.final_z_error;
    ensure(e < 0.02, || format!("final edge error {e:.4}"))?;
    ensure(z_bar < 0.05, || format!("final |z - q_r| {z_bar:.4}"))?;
    Ok(format!("final max edge error {e:.4} < 0.02, final |z - q_r| {z_bar:.4} < 0.05"))
}

fn main() -> ExitCode {
    let checks: [(&str, CheckFn); 10] = [
        ("delayed convergence", convergence_delayed),
        ("delay ordering", delay_ordering),
        ("passivity residual", passivity_residual),
        ("negative control", negative_control),
        ("wave algebra", wave_algebra),
        ("controller identity", controller_identity),
        ("equilibrium fixed point", equilibrium),
        ("euler order", euler_order),
        ("determinism and replay", determinism),
        ("proof diagnostics", proof_diagnostics),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
