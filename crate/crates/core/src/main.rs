use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use marsim::environment::EnvironmentSample;
use marsim::gateway::{GatewayError, ServeOptions, Server};
use marsim::kernel::{
    bench, load_scenario, run, EventLogWriter, Fidelity, KernelError, LogHeader, RunOptions, ScenarioConfig, TimeScale,
    World,
};
use marsim::rl::{load_episode, TrainerServer};
use marsim::sim2real::{attach, default_features, fit_residual, replay, residual_targets, ResidualModel, TrajectoryLog};
use marsim::vehicles::{load_vehicle_spec_file, VehicleSpec};

const DEFAULT_REPLAY_DT: f64 = 0.01;

#[derive(Parser)]
#[command(name = "marsim", version, about = "Deterministic maritime robotics simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario to completion.
    Run(RunArgs),
    /// Run a scenario behind the operator gateway, or serve episodes to a trainer.
    Serve(ServeArgs),
    /// Synthetic fleet benchmark.
    Bench(BenchArgs),
    /// Re-simulate a logged trajectory and report divergence.
    Replay(ReplayArgs),
    /// Fit a residual model to a logged trajectory.
    Fit(FitArgs),
    /// Check scenario, vehicle, mission and episode files.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Real-time factor, or `max`.
    #[arg(long)]
    time_scale: Option<TimeScale>,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Simulated seconds; overrides the scenario.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Write every n-th tick (event ticks are always written).
    #[arg(long)]
    log_decimation: Option<u64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, required_unless_present = "episode", conflicts_with = "episode")]
    scenario: Option<PathBuf>,
    /// Episode definition; serves the trainer protocol instead of the gateway.
    #[arg(long)]
    episode: Option<PathBuf>,
    /// Parallel environments for `--episode`.
    #[arg(long, default_value_t = 1, requires = "episode")]
    envs: usize,
    #[arg(long, default_value = "127.0.0.1:7200")]
    bind: String,
    #[arg(long, env = "MARSIM_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long)]
    time_scale: Option<TimeScale>,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 64)]
    vehicles: usize,
    #[arg(long, default_value = "dyn")]
    fidelity: Fidelity,
    #[arg(long, default_value_t = 60.0)]
    seconds: f64,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SourceArgs {
    /// Trajectory log (JSONL) or event log.
    #[arg(long)]
    log: PathBuf,
    /// Vehicle spec file.
    #[arg(long, conflicts_with = "scenario")]
    spec: Option<PathBuf>,
    /// Scenario supplying spec and environment for `--vehicle`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    vehicle: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Residual model to attach before replaying.
    #[arg(long)]
    residual: Option<PathBuf>,
    /// Integration step; defaults to the log step subdivided to at most 0.01 s.
    #[arg(long)]
    dt: Option<f64>,
    /// Include the per-sample divergence series.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Where to write the fitted model.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Schema { .. } | KernelError::MissingAsset { .. } | KernelError::VersionMismatch { .. } => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn config(msg: impl std::fmt::Display) -> Failure {
    Failure::Config(msg.to_string())
}

fn runtime(msg: impl std::fmt::Display) -> Failure {
    Failure::Runtime(msg.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Replay(a) => cmd_replay(a),
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn scenario_with_overrides(a: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = load_scenario(&a.scenario)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.duration {
        cfg.duration = d;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(ts) = a.time_scale {
        cfg.time_scale = ts;
    }
    if let Some(d) = a.log_decimation {
        cfg.log_decimation = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let cfg = Arc::new(scenario_with_overrides(&a)?);
    let mut world = World::new(cfg.clone());
    let options = RunOptions {
        pacing: cfg.time_scale,
        ..Default::default()
    };
    let stats = match &a.log {
        Some(path) => {
            let file = File::create(path).map_err(|e| config(format!("cannot create {}: {e}", path.display())))?;
            let mut writer = EventLogWriter::new(BufWriter::new(file), &LogHeader::for_config(&cfg)).map_err(runtime)?;
            let mut stats = run(&mut world, &options, Some(&mut writer), &mut ())?;
            stats.log_hash = Some(writer.finish().map_err(runtime)?);
            stats
        }
        None => run::<std::io::Sink>(&mut world, &options, None, &mut ())?,
    };
    println!("{}", stats.summary());
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    if let Some(episode) = &a.episode {
        let cfg = Arc::new(load_episode(episode)?);
        let server = TrainerServer::bind(&a.bind, cfg, a.envs).map_err(|e| config(format!("cannot bind {}: {e}", a.bind)))?;
        eprintln!("serving episodes on tcp://{}", server.local_addr());
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        rt.spawn(async move {
            shutdown_signal().await;
            flag.store(true, Ordering::Relaxed);
        });
        return server.serve(stop).map_err(runtime);
    }

    let path = a.scenario.as_ref().expect("clap requires scenario or episode");
    let cfg = load_scenario(path)?;
    let options = ServeOptions {
        bind: a.bind.clone(),
        token: a.token.clone(),
        pacing: a.time_scale,
        log: a.log.clone(),
    };
    rt.block_on(async move {
        let server = Server::bind(cfg, options).await.map_err(|e| match e {
            GatewayError::Bind { .. } | GatewayError::Log { .. } => config(e),
            other => runtime(other),
        })?;
        eprintln!("serving ws://{}/ws", server.local_addr());
        let outcome = server.run(shutdown_signal()).await.map_err(|e| match e {
            GatewayError::Kernel(k) => Failure::from(k),
            other => runtime(other),
        })?;
        println!("{}", outcome.stats.summary());
        Ok(())
    })
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let report = bench(a.vehicles, a.fidelity, a.seconds, threads)?;
    println!("{}", report.summary());
    Ok(())
}

struct Source {
    log: TrajectoryLog,
    spec: VehicleSpec,
    env: EnvironmentSample,
}

fn load_source(a: &SourceArgs) -> Result<Source, Failure> {
    let text = std::fs::read_to_string(&a.log).map_err(|e| config(format!("cannot read {}: {e}", a.log.display())))?;
    let is_event_log = text
        .lines()
        .next()
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v["type"] == "header");
    let log = if is_event_log {
        let vehicle = a.vehicle.as_deref().ok_or_else(|| config("--vehicle is required for event logs"))?;
        TrajectoryLog::from_event_log(&text, vehicle).map_err(config)?
    } else {
        TrajectoryLog::from_jsonl(&text).map_err(config)?
    };
    let first = log.samples.first().ok_or_else(|| config("log has no samples"))?.pose.position;
    let (spec, env) = match (&a.spec, &a.scenario) {
        (Some(spec), _) => (load_vehicle_spec_file(spec).map_err(config)?, EnvironmentSample::still_water()),
        (None, Some(path)) => {
            let cfg = load_scenario(path)?;
            let id = a.vehicle.as_deref().unwrap_or(&log.vehicle);
            let i = cfg
                .vehicle_index(id)
                .ok_or_else(|| config(format!("no vehicle '{id}' in {}", path.display())))?;
            let spec = (*cfg.vehicles[i].spec).clone();
            let env = cfg.environment.sample_for_hull(&first, spec.freeboard, 0.0);
            (spec, env)
        }
        (None, None) => return Err(config("give --spec or --scenario")),
    };
    Ok(Source { log, spec, env })
}

fn read_model(path: &Path) -> Result<ResidualModel, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn cmd_replay(a: ReplayArgs) -> Result<(), Failure> {
    let Source { log, mut spec, env } = load_source(&a.source)?;
    if let Some(path) = &a.residual {
        spec = attach(&spec, read_model(path)?).map_err(config)?;
    }
    let dt = a.dt.unwrap_or_else(|| {
        let log_dt = log.dt();
        log_dt / (log_dt / DEFAULT_REPLAY_DT).ceil().max(1.0)
    });
    let report = replay(&log, &spec, &env, dt).map_err(runtime)?;
    let mut out = serde_json::to_value(&report).expect("report serializes");
    if !a.full {
        out.as_object_mut().expect("object").remove("position");
    }
    out["samples"] = json!(log.samples.len());
    println!("{out}");
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<(), Failure> {
    let Source { log, spec, env } = load_source(&a.source)?;
    let targets = residual_targets(&log, &spec, &env).map_err(runtime)?;
    let n = spec.n_actuators();
    let (report, mut model) = fit_residual(&log, &targets, &default_features(n), n, a.lambda).map_err(runtime)?;
    model.metadata.source = a.source.log.display().to_string();
    if report.rank_deficient {
        eprintln!(
            "warning: features are nearly collinear in this log (condition number {:.3e}); \
             coefficients are poorly determined and may extrapolate badly. Use a log with \
             more varied commands or a larger --lambda.",
            report.condition_number
        );
    }
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&model).expect("model serializes");
        std::fs::write(out, text).map_err(|e| runtime(format!("cannot write {}: {e}", out.display())))?;
    }
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

fn detect_kind(value: &serde_json::Value) -> &'static str {
    let has = |k: &str| value.get(k).is_some();
    if has("reward") && has("scenario") {
        "episode"
    } else if has("origin") || has("vehicles") {
        "scenario"
    } else if has("domain") {
        "vehicle"
    } else if has("tasks") {
        "mission"
    } else {
        "unknown"
    }
}

fn validate_one(path: &Path) -> Result<&'static str, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let kind = detect_kind(&value);
    match kind {
        "scenario" => load_scenario(path).map(|_| ()).map_err(|e| e.to_string()),
        "episode" => load_episode(path).map(|_| ()).map_err(|e| e.to_string()),
        "vehicle" => load_vehicle_spec_file(path).map(|_| ()).map_err(|e| e.to_string()),
        "mission" => serde_json::from_value::<marsim::guidance::Mission>(value)
            .map_err(|e| e.to_string())
            .and_then(|m| m.validate().map_err(|e| e.to_string())),
        _ => Err("not a scenario, vehicle, mission or episode document".into()),
    }?;
    Ok(kind)
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let mut failed = 0;
    for path in &a.paths {
        match validate_one(path) {
            Ok(kind) => println!("ok kind={kind} path={}", path.display()),
            Err(e) => {
                failed += 1;
                println!("invalid path={}", path.display());
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    if failed > 0 {
        return Err(config(format!("{failed} of {} files invalid", a.paths.len())));
    }
    Ok(())
}
