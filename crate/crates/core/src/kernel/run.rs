//! Run loop with wall-clock pacing, run statistics and the fleet benchmark.

use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{secs, sleep_until, EventLogWriter, KernelError, ScenarioConfig, TickReport, TimeScale, VehicleConfig, World};
use crate::dynamics::{FidelityLevel, RigidBodyState};
use crate::gateway::LinkPolicy;
use crate::geomath::{GeoPoint, Pose, Vec3};
use crate::guidance::{Mission, Target, Task};
use crate::vehicles::{load_vehicle_spec, VehicleSpec};

const BENCH_VEHICLE: &str = include_str!("../../assets/vehicles/torpedo_auv.json");
/// Real-time factor the benchmark is compared against.
pub const BENCH_TARGET: f64 = 50.0;

/// Accumulated wall time per tick phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub deliver: Duration,
    pub commands: Duration,
    pub vehicles: Duration,
    pub transmit: Duration,
    pub logging: Duration,
}

impl PhaseTimes {
    fn since(&self, earlier: &PhaseTimes) -> PhaseTimes {
        PhaseTimes {
            deliver: self.deliver - earlier.deliver,
            commands: self.commands - earlier.commands,
            vehicles: self.vehicles - earlier.vehicles,
            transmit: self.transmit - earlier.transmit,
            logging: self.logging - earlier.logging,
        }
    }

    pub fn entries(&self) -> [(&'static str, f64); 5] {
        [
            ("deliver", secs(self.deliver)),
            ("commands", secs(self.commands)),
            ("vehicles", secs(self.vehicles)),
            ("transmit", secs(self.transmit)),
            ("logging", secs(self.logging)),
        ]
    }
}

impl Serialize for PhaseTimes {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(5))?;
        for (k, v) in self.entries() {
            m.serialize_entry(k, &v)?;
        }
        m.end()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub ticks: u64,
    pub sim_time: f64,
    pub wall_time: f64,
    pub achieved_rt_factor: f64,
    pub requested: String,
    pub vehicles: usize,
    pub phases: PhaseTimes,
    pub log_records: u64,
    pub log_hash: Option<String>,
}

impl RunStats {
    /// One machine-parsable `key=value` line.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "ticks={} sim_time={:.3} wall_time={:.6} rt_factor={:.3} requested={} vehicles={} log_records={}",
            self.ticks, self.sim_time, self.wall_time, self.achieved_rt_factor, self.requested, self.vehicles, self.log_records
        );
        for (k, v) in self.phases.entries() {
            s.push_str(&format!(" phase_{k}={v:.6}"));
        }
        if let Some(h) = &self.log_hash {
            s.push_str(&format!(" log_hash={h}"));
        }
        s
    }
}

/// Hooks called around every tick; the gateway uses them to feed commands
/// in and publish telemetry out.
pub trait TickObserver {
    fn before_tick(&mut self, _world: &mut World) {}
    fn after_tick(&mut self, _world: &World, _report: &TickReport) {}
}

impl TickObserver for () {}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub pacing: TimeScale,
    /// Stop after this tick; defaults to the scenario duration.
    pub until_tick: Option<u64>,
    pub stop: Option<Arc<AtomicBool>>,
}

/// Steps `world` to the end of its scenario, logging and pacing as asked.
pub fn run<W: Write>(
    world: &mut World,
    options: &RunOptions,
    mut log: Option<&mut EventLogWriter<W>>,
    observer: &mut dyn TickObserver,
) -> Result<RunStats, KernelError> {
    let cfg = world.config().clone();
    let target = options.until_tick.unwrap_or_else(|| cfg.total_ticks());
    let first_tick = world.tick_count();
    let phases_before = *world.phase_times();
    let mut logging = Duration::ZERO;

    if let Some(l) = log.as_deref_mut() {
        if first_tick == 0 {
            l.write(&world.record(None))?;
        }
    }
    let start = Instant::now();
    while world.tick_count() < target {
        if options.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed)) {
            break;
        }
        observer.before_tick(world);
        let report = world.tick()?;
        observer.after_tick(world, &report);
        if let Some(l) = log.as_deref_mut() {
            let clock = Instant::now();
            if report.tick % cfg.log_decimation == 0 || !report.events.is_empty() || !report.deliveries.is_empty() {
                l.write(&world.record(Some(&report)))?;
            }
            logging += clock.elapsed();
        }
        if let TimeScale::Factor(k) = options.pacing {
            let sim = (world.tick_count() - first_tick) as f64 * cfg.dt;
            sleep_until(start + Duration::from_secs_f64(sim / k));
        }
    }
    let wall = start.elapsed().as_secs_f64().max(1e-9);
    let ticks = world.tick_count() - first_tick;
    let sim_time = ticks as f64 * cfg.dt;
    let mut phases = world.phase_times().since(&phases_before);
    phases.logging = logging;
    Ok(RunStats {
        ticks,
        sim_time,
        wall_time: wall,
        achieved_rt_factor: sim_time / wall,
        requested: options.pacing.to_string(),
        vehicles: cfg.vehicles.len(),
        phases,
        log_records: log.map(|l| l.records()).unwrap_or(0),
        log_hash: None,
    })
}

/// SHA-256 of all vehicle runtime state; equal hashes mean equal trajectories.
pub fn state_hash(world: &World) -> String {
    let json = serde_json::to_string(world.vehicles()).expect("vehicles serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fidelity {
    Kinematic,
    Dynamic,
}

impl FromStr for Fidelity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kin" | "kinematic" => Ok(Fidelity::Kinematic),
            "dyn" | "dynamic" => Ok(Fidelity::Dynamic),
            _ => Err(format!("fidelity must be 'kin' or 'dyn', got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub vehicles: usize,
    pub fidelity: String,
    pub threads: usize,
    pub stats: RunStats,
    pub target: f64,
    pub state_hash: String,
}

impl BenchReport {
    pub fn summary(&self) -> String {
        format!(
            "bench vehicles={} fidelity={} threads={} target_rt={} meets_target={} state_hash={} {}",
            self.vehicles,
            self.fidelity,
            self.threads,
            self.target,
            self.stats.achieved_rt_factor >= self.target,
            self.state_hash,
            self.stats.summary()
        )
    }
}

pub fn bench_vehicle_spec() -> VehicleSpec {
    load_vehicle_spec(BENCH_VEHICLE).expect("bundled vehicle spec is valid")
}

/// Synthetic fleet: `n` AUVs on a 100 m grid, each flying its own lawnmower
/// survey at 10 m depth with acoustic telemetry.
pub fn bench_scenario(n: usize, fidelity: Fidelity, seconds: f64, threads: usize) -> ScenarioConfig {
    let mut spec = bench_vehicle_spec();
    spec.fidelity = match fidelity {
        Fidelity::Kinematic => FidelityLevel::Kinematic,
        Fidelity::Dynamic => FidelityLevel::Dynamic,
    };
    let spec = Arc::new(spec);
    let origin = GeoPoint::new(58.25, 11.45, 0.0).expect("valid origin");
    let mut cfg = ScenarioConfig::empty(origin, seconds);
    cfg.name = format!("bench-{n}");
    cfg.threads = threads.max(1);
    for i in 0..n {
        let (row, col) = ((i / 8) as f64, (i % 8) as f64);
        let start = Vec3::new(row * 100.0, col * 100.0, 10.0);
        let mission = Mission::new(
            format!("survey-{i}"),
            vec![Task::Survey {
                corner: Target::local(start.x, start.y, 10.0),
                length: 300.0,
                width: 60.0,
                track_spacing: 20.0,
                depth: 10.0,
                speed: 1.5,
                acceptance_radius: 3.0,
            }],
        );
        cfg.vehicles.push(VehicleConfig {
            id: format!("auv{i:02}"),
            spec: spec.clone(),
            initial: RigidBodyState::at_rest(Pose::from_euler(start, 0.0, 0.0, 0.0), spec.n_actuators()),
            mission: Some(mission),
            link: LinkPolicy::acoustic_default(),
            external: false,
        });
    }
    cfg
}

/// Runs the synthetic fleet unpaced with logging off.
pub fn bench(n: usize, fidelity: Fidelity, seconds: f64, threads: usize) -> Result<BenchReport, KernelError> {
    let cfg = Arc::new(bench_scenario(n, fidelity, seconds, threads));
    cfg.validate()?;
    let mut world = World::new(cfg.clone());
    let stats = run::<std::io::Sink>(&mut world, &RunOptions::default(), None, &mut ())?;
    Ok(BenchReport {
        vehicles: n,
        fidelity: match fidelity {
            Fidelity::Kinematic => "kin".into(),
            Fidelity::Dynamic => "dyn".into(),
        },
        threads: cfg.threads,
        stats,
        target: BENCH_TARGET,
        state_hash: state_hash(&world),
    })
}
