use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use scatternet::export::{self, Summary};
use scatternet::record::{RecordKind, SessionRecord};
use scatternet::session::{Pacing, SessionConfig, SessionServer, ViewMode, DEFAULT_FEEDBACK_RATE};
use scatternet::sweep::{self, Axis, SweepSpec};
use scatternet::{Error, LoadedScenario};
use scatternet_core::simulator;

const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

/// Robot network under passivity-based control over delayed scattering channels.
#[derive(Parser)]
#[command(name = "scatternet", version)]
struct Cli {
    /// Override the scenario's integration step (s).
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Override the scenario's duration (s).
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Exit with status 2 when the passivity monitor reports violations.
    #[arg(long, global = true)]
    strict: bool,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Also write a replayable session record.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Run the Cartesian product of parameter axes over a base scenario.
    Sweep {
        scenario: PathBuf,
        /// `NAME=v1,v2,...` with NAME one of T, a, b, sigma, K, dt. Repeatable.
        #[arg(long = "axis")]
        axes: Vec<String>,
        /// Allow more than 10^4 runs.
        #[arg(long)]
        force: bool,
    },
    /// Re-run a session record and check the trajectory matches exactly.
    Replay { record: PathBuf },
    /// Host a live session for one operator over a websocket.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, value_enum, default_value_t = View::Operator)]
        view: View,
        #[arg(long)]
        record: Option<PathBuf>,
        /// State frames per second.
        #[arg(long, default_value_t = DEFAULT_FEEDBACK_RATE)]
        rate: f64,
        /// Simulation seconds per wall-clock second; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Begin stepping without waiting for a start message.
        #[arg(long)]
        autostart: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum View {
    Operator,
    Debug,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ReplayDivergence { .. } => ExitCode::from(EXIT_VIOLATION),
                _ => ExitCode::from(EXIT_CONFIG),
            }
        }
    }
}

fn load(cli: &Cli, path: &Path) -> Result<LoadedScenario, Error> {
    let mut loaded = LoadedScenario::load(path)?;
    if let Some(dt) = cli.dt {
        loaded.file.dt = dt;
    }
    if let Some(d) = cli.duration {
        loaded.file.duration = d;
    }
    Ok(loaded)
}

fn dispatch(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Run { scenario, record } => {
            let loaded = load(cli, scenario)?;
            let sc = loaded.scenario()?;
            let started = Instant::now();
            let log = simulator::run(&sc)?;
            let wall = started.elapsed();
            let summary = Summary::new(&log, loaded.file.name.clone(), sc.delay);
            export::write_artifacts(&cli.out, &log, &summary)?;
            if let Some(path) = record {
                SessionRecord::new(RecordKind::Batch, &loaded.file, &log, Vec::new()).save(path)?;
            }
            print!("{}", summary.to_text());
            println!("wall clock          {:.2} s", wall.as_secs_f64());
            println!("artifacts           {}", cli.out.display());
            Ok(violation_code(cli, summary.violations))
        }
        Command::Sweep { scenario, axes, force } => {
            let loaded = load(cli, scenario)?;
            let axes = axes.iter().map(|a| a.parse::<Axis>()).collect::<Result<Vec<_>, _>>()?;
            let spec = SweepSpec { base: loaded.file.clone(), axes };
            let rows = sweep::run(&spec, loaded.base.as_deref(), *force)?;
            std::fs::create_dir_all(&cli.out).map_err(|e| Error::Io { path: cli.out.clone(), source: e })?;
            let path = cli.out.join("sweep.csv");
            let f = std::fs::File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            sweep::write_rows(&rows, f)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            let violations: usize = rows.iter().filter_map(|r| r.violations).sum();
            println!("{} runs, {} failed, {} converged -> {}", rows.len(), failed, rows.iter().filter(|r| r.converged).count(), path.display());
            Ok(violation_code(cli, violations))
        }
        Command::Replay { record } => {
            let rec = SessionRecord::load(record)?;
            let log = rec.replay()?;
            let summary = Summary::new(&log, rec.scenario.name.clone(), rec.scenario.delay);
            export::write_artifacts(&cli.out, &log, &summary)?;
            println!("replay matches the record ({} steps)", log.records.len().saturating_sub(1));
            print!("{}", summary.to_text());
            Ok(violation_code(cli, summary.violations))
        }
        Command::Serve { scenario, port, view, record, rate, speed, autostart } => {
            let loaded = load(cli, scenario)?;
            // fail on a bad scenario before binding
            loaded.scenario()?;
            let mut config = SessionConfig::new(loaded.file);
            config.port = *port;
            config.view = match view {
                View::Operator => ViewMode::Operator,
                View::Debug => ViewMode::Debug,
            };
            config.record = record.clone();
            config.feedback_rate = *rate;
            config.autostart = *autostart;
            config.pacing = if *speed > 0.0 { Pacing::RealTime { speed: *speed } } else { Pacing::AsFastAsPossible };
            serve(cli, config)
        }
    }
}

fn serve(cli: &Cli, config: SessionConfig) -> Result<u8, Error> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: "tokio runtime".into(), source: e })?;
    runtime.block_on(async {
        let server = SessionServer::start(config).await?;
        println!("session listening on ws://{}/ws", server.local_addr());
        tokio::select! {
            _ = server.wait_done() => println!("session finished"),
            _ = tokio::signal::ctrl_c() => println!("interrupted"),
        }
        let Some(rec) = server.shutdown().await else {
            println!("no steps were run");
            return Ok(0);
        };
        print!("{}", rec.summary.to_text());
        Ok(violation_code(cli, rec.summary.violations))
    })
}

fn violation_code(cli: &Cli, violations: usize) -> u8 {
    if cli.strict && violations > 0 {
        EXIT_VIOLATION
    } else {
        0
    }
}
