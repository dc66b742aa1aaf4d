//! Fixed-step multi-vehicle scheduler.
//!
//! Every tick runs five phases in a fixed order: deliver due acoustic
//! messages, apply queued commands, step each vehicle (sense, guidance,
//! actuate, dynamics), enqueue transmissions, record events. Vehicles only
//! see each other through the acoustic channel, so the per-vehicle phase
//! can run on a worker pool without changing any result.

mod log;
mod run;
mod scenario;

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::{AcousticError, AcousticMessage, ChannelState, Destination, DropReason};
use crate::dynamics::{step_dynamic, step_kinematic, step_quadrotor, DynamicsError, RigidBodyState};
use crate::environment::{grounding_check, Grounding};
use crate::gateway::{ActiveLink, CompressedState};
use crate::geomath::{BodyVelocity, Pose};
use crate::guidance::{
    autopilot_step, kinematic_command, mission_step, quadrotor_autopilot, AutopilotState, Mission,
    MissionStatus, SetpointMode, Setpoints,
};
use crate::vehicles::{clamp_commands, sense, Domain, Plant, SensorReading};

pub use log::{log_hash, normalize_log, EventLogWriter, LogHeader, TickRecord, VehicleRecord, EVENTLOG_SCHEMA, EVENTLOG_VERSION};
pub use run::{bench, run, state_hash, BenchReport, Fidelity, PhaseTimes, RunOptions, RunStats, TickObserver};
pub use scenario::{
    load_scenario, parse_scenario, C2Config, ScenarioConfig, TimeScale, VehicleConfig, DEFAULT_DECIMATION, DEFAULT_DT,
};

/// Acoustic node name of the operator station.
pub const C2_NODE: &str = "c2";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("schema error at '{path}': {message}")]
    Schema { path: String, message: String },
    #[error("missing asset: {path}")]
    MissingAsset { path: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vehicle '{vehicle}': {source}")]
    Dynamics {
        vehicle: String,
        #[source]
        source: DynamicsError,
    },
    #[error("acoustic channel: {0}")]
    Channel(#[from] AcousticError),
    #[error("snapshot version {found} does not match {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("snapshot does not fit this scenario: {0}")]
    SnapshotMismatch(String),
    #[error("log sink: {0}")]
    Log(#[from] std::io::Error),
}

/// Replacement state for an externally driven vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedState {
    pub pose: Pose,
    #[serde(default)]
    pub nu: BodyVelocity,
}

/// Operator or trainer request, applied at the start of the next tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    Abort { vehicle: String },
    SetMission { vehicle: String, mission: Mission },
    InjectState { vehicle: String, state: InjectedState },
    /// Direct actuator setpoints, bypassing guidance until released.
    SetActuators { vehicle: String, commands: Vec<f64> },
    ReleaseActuators { vehicle: String },
}

impl Command {
    pub fn vehicle(&self) -> &str {
        match self {
            Command::Abort { vehicle }
            | Command::SetMission { vehicle, .. }
            | Command::InjectState { vehicle, .. }
            | Command::SetActuators { vehicle, .. }
            | Command::ReleaseActuators { vehicle } => vehicle,
        }
    }

    pub fn op(&self) -> &'static str {
        match self {
            Command::Abort { .. } => "abort",
            Command::SetMission { .. } => "set_mission",
            Command::InjectState { .. } => "inject_state",
            Command::SetActuators { .. } => "set_actuators",
            Command::ReleaseActuators { .. } => "release_actuators",
        }
    }

    /// Operator commands that travel over the acoustic link to submerged vehicles.
    fn is_operator_command(&self) -> bool {
        matches!(self, Command::Abort { .. } | Command::SetMission { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Via {
    Direct,
    Acoustic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Grounded { vehicle: String, penetration: f64 },
    /// Number of saturated actuators changed.
    Clamped { vehicle: String, count: usize },
    MissionStatus { vehicle: String, status: MissionStatus },
    GuidanceError { vehicle: String, message: String },
    Dropped { src: String, receiver: String, seq: u64, reason: DropReason },
    CommandApplied { vehicle: String, op: String, via: Via },
    CommandSent { vehicle: String, op: String, bytes: usize },
    CommandRejected { vehicle: String, op: String, reason: String },
    StateInjected { vehicle: String },
    TelemetrySent { vehicle: String, bytes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub src: String,
    pub receiver: String,
    pub seq: u64,
    pub bytes: usize,
    pub tx_time: f64,
    pub deliver_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TelemetryPayload {
    Full {
        state: RigidBodyState,
        status: Option<MissionStatus>,
    },
    Compressed(CompressedState),
}

/// A state report that reached the operator station this tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryUpdate {
    pub vehicle: String,
    /// Simulated time the reported state refers to.
    pub sample_time: f64,
    pub received_time: f64,
    pub payload: TelemetryPayload,
}

/// Everything one tick produced.
#[derive(Debug, Clone, Default)]
pub struct TickReport {
    /// Tick count after the step.
    pub tick: u64,
    pub t: f64,
    pub deliveries: Vec<DeliveryRecord>,
    pub events: Vec<Event>,
    pub telemetry: Vec<TelemetryUpdate>,
    pub applied: Vec<(Command, u64)>,
}

/// Mutable per-vehicle state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRuntime {
    pub id: String,
    pub state: RigidBodyState,
    pub mission: Option<Mission>,
    pub autopilot: AutopilotState,
    /// Actuator setpoints applied during the last step.
    pub commands: Vec<f64>,
    pub actuator_override: Option<Vec<f64>>,
    pub grounded: bool,
    pub clamped: usize,
    /// Tick of the last acoustic state report.
    pub last_report_tick: Option<u64>,
    #[serde(default)]
    pub readings: Vec<SensorReading>,
}

impl VehicleRuntime {
    fn new(cfg: &VehicleConfig) -> Self {
        Self {
            id: cfg.id.clone(),
            state: cfg.initial.clone(),
            mission: cfg.mission.clone(),
            autopilot: AutopilotState::default(),
            commands: vec![0.0; cfg.spec.n_actuators()],
            actuator_override: None,
            grounded: false,
            clamped: 0,
            last_report_tick: None,
            readings: Vec::new(),
        }
    }

    pub fn status(&self) -> Option<MissionStatus> {
        self.mission.as_ref().map(|m| m.status)
    }
}

/// Full world state at a tick boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub tick: u64,
    pub vehicles: Vec<VehicleRuntime>,
    pub channel: ChannelState,
    pub pending: Vec<Command>,
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, KernelError> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text).map_err(|e| KernelError::Schema {
            path: "snapshot".into(),
            message: e.to_string(),
        })?;
        if probe.version != SNAPSHOT_VERSION {
            return Err(KernelError::VersionMismatch {
                found: probe.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| KernelError::Schema {
            path: "snapshot".into(),
            message: e.to_string(),
        })
    }
}

struct VehicleOutcome {
    events: Vec<Event>,
}

pub struct World {
    config: Arc<ScenarioConfig>,
    tick: u64,
    vehicles: Vec<VehicleRuntime>,
    channel: ChannelState,
    pending: VecDeque<Command>,
    pool: Option<Arc<rayon::ThreadPool>>,
    phase_times: PhaseTimes,
}

impl World {
    pub fn new(config: Arc<ScenarioConfig>) -> Self {
        let vehicles = config.vehicles.iter().map(VehicleRuntime::new).collect();
        let channel = ChannelState::new(config.channel, config.seed);
        let mut w = Self {
            config,
            tick: 0,
            vehicles,
            channel,
            pending: VecDeque::new(),
            pool: None,
            phase_times: PhaseTimes::default(),
        };
        let threads = w.config.threads;
        w.set_threads(threads);
        w
    }

    /// Worker threads for the per-vehicle phase; 1 runs inline.
    pub fn set_threads(&mut self, threads: usize) {
        self.pool = if threads > 1 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .ok()
                .map(Arc::new)
        } else {
            None
        };
    }

    pub fn config(&self) -> &Arc<ScenarioConfig> {
        &self.config
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn vehicles(&self) -> &[VehicleRuntime] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: &str) -> Option<&VehicleRuntime> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn channel(&self) -> &ChannelState {
        &self.channel
    }

    pub fn phase_times(&self) -> &PhaseTimes {
        &self.phase_times
    }

    /// Queues a command for phase 2 of the next tick.
    pub fn submit(&mut self, command: Command) {
        self.pending.push_back(command);
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            scenario: self.config.name.clone(),
            seed: self.config.seed,
            tick: self.tick,
            vehicles: self.vehicles.clone(),
            channel: self.channel.clone(),
            pending: self.pending.iter().cloned().collect(),
        }
    }

    /// Rebuilds a world from a snapshot taken under the same scenario.
    pub fn restore(config: Arc<ScenarioConfig>, snapshot: Snapshot) -> Result<Self, KernelError> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(KernelError::VersionMismatch {
                found: snapshot.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let ids: Vec<&str> = config.vehicles.iter().map(|v| v.id.as_str()).collect();
        let snap_ids: Vec<&str> = snapshot.vehicles.iter().map(|v| v.id.as_str()).collect();
        if ids != snap_ids {
            return Err(KernelError::SnapshotMismatch(format!(
                "vehicles {snap_ids:?} vs scenario {ids:?}"
            )));
        }
        let mut w = World::new(config);
        w.tick = snapshot.tick;
        w.vehicles = snapshot.vehicles;
        w.channel = snapshot.channel;
        w.pending = snapshot.pending.into();
        Ok(w)
    }

    /// Advances the world by one fixed step.
    pub fn tick(&mut self) -> Result<TickReport, KernelError> {
        let cfg = self.config.clone();
        let dt = cfg.dt;
        let t0 = self.tick as f64 * dt;
        let t1 = (self.tick + 1) as f64 * dt;
        let mut report = TickReport {
            tick: self.tick + 1,
            t: t1,
            ..Default::default()
        };

        // 1. deliveries
        let clock = Instant::now();
        for d in self.channel.poll_deliveries(t0)? {
            report.deliveries.push(DeliveryRecord {
                src: d.message.src.clone(),
                receiver: d.receiver.clone(),
                seq: d.message.seq,
                bytes: d.message.size(),
                tx_time: d.message.tx_time,
                deliver_time: d.deliver_time,
            });
            if d.receiver == C2_NODE {
                if let Ok(c) = CompressedState::decode(&d.message.payload) {
                    report.telemetry.push(TelemetryUpdate {
                        vehicle: d.message.src.clone(),
                        sample_time: d.message.tx_time,
                        received_time: d.deliver_time,
                        payload: TelemetryPayload::Compressed(c),
                    });
                }
            } else if d.message.src == C2_NODE {
                if let Ok(cmd) = serde_json::from_slice::<Command>(&d.message.payload) {
                    if cmd.vehicle() == d.receiver {
                        self.apply(cmd, Via::Acoustic, &mut report);
                    }
                }
            }
        }
        self.phase_times.deliver += clock.elapsed();

        // 2. commands
        let clock = Instant::now();
        while let Some(cmd) = self.pending.pop_front() {
            self.route(cmd, t0, &mut report);
        }
        self.phase_times.commands += clock.elapsed();

        // 3. vehicles
        let clock = Instant::now();
        let tick = self.tick;
        let work = |(rt, vc): (&mut VehicleRuntime, &VehicleConfig)| step_vehicle(rt, vc, &cfg, tick, t0);
        let outcomes: Vec<Result<VehicleOutcome, KernelError>> = match &self.pool {
            Some(pool) => pool.install(|| {
                self.vehicles
                    .par_iter_mut()
                    .zip(cfg.vehicles.par_iter())
                    .map(work)
                    .collect()
            }),
            None => self.vehicles.iter_mut().zip(cfg.vehicles.iter()).map(work).collect(),
        };
        for o in outcomes {
            report.events.extend(o?.events);
        }
        self.phase_times.vehicles += clock.elapsed();

        // 4. transmissions
        let clock = Instant::now();
        self.tick += 1;
        self.transmit_reports(t1, &mut report);
        self.phase_times.transmit += clock.elapsed();
        Ok(report)
    }

    fn reject(cmd: &Command, reason: &str, report: &mut TickReport) {
        report.events.push(Event::CommandRejected {
            vehicle: cmd.vehicle().to_string(),
            op: cmd.op().to_string(),
            reason: reason.to_string(),
        });
    }

    /// Applies a command now, or forwards it acoustically if the target is
    /// submerged on an acoustic link.
    fn route(&mut self, cmd: Command, t: f64, report: &mut TickReport) {
        let Some(i) = self.config.vehicle_index(cmd.vehicle()) else {
            Self::reject(&cmd, "unknown vehicle", report);
            return;
        };
        let vc = &self.config.vehicles[i];
        let depth = self.vehicles[i].state.pose.position.z;
        if cmd.is_operator_command() && !vc.external {
            if let ActiveLink::Acoustic { .. } = vc.link.active(depth) {
                let payload = serde_json::to_vec(&cmd).expect("command serializes");
                let bytes = payload.len();
                let msg = AcousticMessage::new(C2_NODE, Destination::Node(cmd.vehicle().to_string()), payload, t);
                let dst = [(vc.id.clone(), self.vehicles[i].state.pose.position)];
                let c2 = self.config.c2.position;
                report.events.push(Event::CommandSent {
                    vehicle: vc.id.clone(),
                    op: cmd.op().to_string(),
                    bytes,
                });
                for d in self.channel.transmit(msg, &c2, &dst) {
                    if let Some(reason) = d.drop_reason {
                        report.events.push(Event::Dropped {
                            src: C2_NODE.to_string(),
                            receiver: d.receiver,
                            seq: d.message.seq,
                            reason,
                        });
                    }
                }
                return;
            }
        }
        self.apply(cmd, Via::Direct, report);
    }

    fn apply(&mut self, cmd: Command, via: Via, report: &mut TickReport) {
        let Some(i) = self.config.vehicle_index(cmd.vehicle()) else {
            Self::reject(&cmd, "unknown vehicle", report);
            return;
        };
        let spec = self.config.vehicles[i].spec.clone();
        let external = self.config.vehicles[i].external;
        let rt = &mut self.vehicles[i];
        match &cmd {
            Command::Abort { .. } => match rt.mission.as_mut() {
                Some(m) => m.abort(),
                None => {
                    let mut m = Mission::new("abort", Vec::new());
                    m.abort();
                    rt.mission = Some(m);
                }
            },
            Command::SetMission { mission, .. } => {
                if let Err(e) = mission.validate() {
                    Self::reject(&cmd, &e.to_string(), report);
                    return;
                }
                let mut m = mission.clone();
                m.status = MissionStatus::Pending;
                m.progress = Default::default();
                rt.mission = Some(m);
                rt.autopilot = AutopilotState::default();
            }
            Command::InjectState { state, .. } => {
                if !external {
                    Self::reject(&cmd, "not externally driven", report);
                    return;
                }
                rt.state.pose = state.pose;
                rt.state.nu = state.nu;
                report.events.push(Event::StateInjected {
                    vehicle: rt.id.clone(),
                });
            }
            Command::SetActuators { commands, .. } => {
                if commands.len() != spec.n_actuators() {
                    Self::reject(
                        &cmd,
                        &format!("expected {} actuator values, got {}", spec.n_actuators(), commands.len()),
                        report,
                    );
                    return;
                }
                rt.actuator_override = Some(commands.clone());
            }
            Command::ReleaseActuators { .. } => rt.actuator_override = None,
        }
        report.events.push(Event::CommandApplied {
            vehicle: rt.id.clone(),
            op: cmd.op().to_string(),
            via,
        });
        report.applied.push((cmd, self.tick + 1));
    }

    fn transmit_reports(&mut self, t: f64, report: &mut TickReport) {
        let cfg = self.config.clone();
        let c2 = [(C2_NODE.to_string(), cfg.c2.position)];
        for (rt, vc) in self.vehicles.iter_mut().zip(&cfg.vehicles) {
            let depth = rt.state.pose.position.z;
            match vc.link.active(depth) {
                ActiveLink::Direct { rate } => {
                    let every = ((1.0 / (rate * cfg.dt)).round() as u64).max(1);
                    if self.tick.is_multiple_of(every) {
                        report.telemetry.push(TelemetryUpdate {
                            vehicle: rt.id.clone(),
                            sample_time: t,
                            received_time: t,
                            payload: TelemetryPayload::Full {
                                state: rt.state.clone(),
                                status: rt.status(),
                            },
                        });
                    }
                }
                ActiveLink::Acoustic { period, budget } => {
                    let every = ((period / cfg.dt).round() as u64).max(1);
                    let due = rt.last_report_tick.is_none_or(|last| self.tick - last >= every);
                    if !due {
                        continue;
                    }
                    rt.last_report_tick = Some(self.tick);
                    let energy = self.channel.energy_of(&rt.id);
                    let payload = CompressedState::from_state(&rt.state, rt.status(), energy, t).encode();
                    debug_assert!(payload.len() <= budget);
                    report.events.push(Event::TelemetrySent {
                        vehicle: rt.id.clone(),
                        bytes: payload.len(),
                    });
                    let msg = AcousticMessage::new(rt.id.clone(), Destination::Node(C2_NODE.into()), payload.to_vec(), t);
                    for d in self.channel.transmit(msg, &rt.state.pose.position, &c2) {
                        if let Some(reason) = d.drop_reason {
                            report.events.push(Event::Dropped {
                                src: rt.id.clone(),
                                receiver: d.receiver,
                                seq: d.message.seq,
                                reason,
                            });
                        }
                    }
                }
            }
        }
    }

    /// Log record for the current tick.
    pub fn record(&self, report: Option<&TickReport>) -> TickRecord {
        TickRecord {
            kind: "tick".into(),
            tick: self.tick,
            t: self.time(),
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleRecord {
                    id: v.id.clone(),
                    pose: v.state.pose,
                    nu: v.state.nu,
                    actuators: v.state.actuators.clone(),
                    commands: v.commands.clone(),
                    mission: v.status(),
                    grounded: v.grounded,
                    readings: v.readings.clone(),
                })
                .collect(),
            deliveries: report.map(|r| r.deliveries.clone()).unwrap_or_default(),
            events: report.map(|r| r.events.clone()).unwrap_or_default(),
        }
    }
}

fn hold(state: &RigidBodyState) -> Setpoints {
    Setpoints {
        heading: state.pose.heading(),
        depth: state.pose.position.z,
        speed: 0.0,
        mode: SetpointMode::Hold,
    }
}

fn step_vehicle(
    rt: &mut VehicleRuntime,
    vc: &VehicleConfig,
    cfg: &ScenarioConfig,
    tick: u64,
    t: f64,
) -> Result<VehicleOutcome, KernelError> {
    let spec = &vc.spec;
    let dt = cfg.dt;
    let mut events = Vec::new();
    let env = cfg
        .environment
        .sample_for_hull(&rt.state.pose.position, spec.freeboard, t);
    rt.readings = sense(spec, &rt.id, &rt.state, &env, cfg.seed, tick, dt);
    if vc.external || rt.grounded {
        return Ok(VehicleOutcome { events });
    }

    let before = rt.status();
    let setpoints = match rt.mission.as_mut() {
        Some(m) => match mission_step(m, &rt.state, t, &cfg.origin) {
            Ok((sp, _)) => sp,
            Err(e) => {
                events.push(Event::GuidanceError {
                    vehicle: rt.id.clone(),
                    message: e.to_string(),
                });
                m.abort();
                hold(&rt.state)
            }
        },
        None => hold(&rt.state),
    };
    if let Some(status) = rt.status() {
        if Some(status) != before {
            events.push(Event::MissionStatus {
                vehicle: rt.id.clone(),
                status,
            });
        }
    }

    let wrap = |source| KernelError::Dynamics {
        vehicle: rt.id.clone(),
        source,
    };
    let next = if spec.uses_dynamics() {
        let raw: Vec<f64> = match (&rt.actuator_override, &spec.plant) {
            (Some(values), _) => values.clone(),
            (None, Some(Plant::Quadrotor(q))) => quadrotor_autopilot(&setpoints, &rt.state, q).to_vec(),
            (None, _) => {
                let ch = autopilot_step(&spec.autopilot, &setpoints, &rt.state, &mut rt.autopilot, dt);
                spec.mix
                    .iter()
                    .map(|m| m.speed * ch.speed + m.heading * ch.heading + m.depth * ch.depth)
                    .collect()
            }
        };
        let act = clamp_commands(spec, &raw);
        if act.clamped != rt.clamped {
            rt.clamped = act.clamped;
            events.push(Event::Clamped {
                vehicle: rt.id.clone(),
                count: act.clamped,
            });
        }
        rt.commands = act.commands;
        match &spec.plant {
            Some(Plant::Marine(model)) => step_dynamic(&rt.state, model, &env, &rt.commands, spec.residual.as_ref(), dt),
            Some(Plant::Quadrotor(q)) => step_quadrotor(&rt.state, q, &env.wind, &rt.commands, dt),
            None => unreachable!("uses_dynamics implies a plant"),
        }
        .map_err(wrap)?
    } else {
        let vertical = spec.domain != Domain::Surface;
        let cmd = kinematic_command(&setpoints, &rt.state, &spec.kinematic, vertical);
        step_kinematic(&rt.state, &cmd, spec.kinematic.response_tau, dt)
    };
    rt.state = next;

    if spec.domain != Domain::Aerial {
        if let Some(grid) = &cfg.environment.bathymetry {
            if let Ok(Grounding::Grounded { penetration }) = grounding_check(grid, &rt.state.pose.position, spec.draft) {
                rt.grounded = true;
                rt.state.nu = BodyVelocity::zero();
                events.push(Event::Grounded {
                    vehicle: rt.id.clone(),
                    penetration,
                });
            }
        }
    }
    Ok(VehicleOutcome { events })
}

/// Sleeps until `deadline` on the monotonic clock.
pub(crate) fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}

pub(crate) fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}
