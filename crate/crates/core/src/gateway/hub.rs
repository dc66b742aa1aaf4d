//! Shared gateway state: vehicle registry, command queue, latest frame per
//! topic, and the operator-side ghosts.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use serde_json::{json, Value};
use tokio::sync::broadcast;

use super::protocol::{topic, Channel, ErrorCode, Frame, FrameError, FrameType, TopicPattern};
use super::LinkPolicy;
use crate::dynamics::RigidBodyState;
use crate::geomath::GeoPoint;
use crate::guidance::{DeadReckonState, Mission, MissionStatus};
use crate::kernel::{Command, RunStats, ScenarioConfig, TelemetryPayload, TelemetryUpdate, TickObserver, TickReport, World};
use crate::vehicles::{Domain, VehicleSpec};

const BROADCAST_CAPACITY: usize = 4096;

#[derive(Debug, Clone)]
pub struct VehicleEntry {
    pub id: String,
    pub spec: Arc<VehicleSpec>,
    pub external: bool,
    pub link: LinkPolicy,
}

struct GhostTrack {
    dr: DeadReckonState,
    status: Option<MissionStatus>,
}

/// Operator's copy of a vehicle's plan. Only changes when the operator sends
/// a mission or an abort.
#[derive(Clone)]
struct Plan {
    mission: Option<Mission>,
}

pub struct Hub {
    token: Option<String>,
    origin: GeoPoint,
    dt: f64,
    vehicles: BTreeMap<String, VehicleEntry>,
    commands: Mutex<Sender<Command>>,
    frames: broadcast::Sender<Arc<Frame>>,
    latest: RwLock<BTreeMap<String, Frame>>,
    plans: Mutex<BTreeMap<String, Plan>>,
    ghosts: Mutex<BTreeMap<String, GhostTrack>>,
    clock_bits: AtomicU64,
    tick: AtomicU64,
    started: Instant,
    requested: String,
    finished: RwLock<Option<Result<RunStats, String>>>,
    connections: AtomicUsize,
}

impl Hub {
    /// Builds the hub and the receiving end of its command queue.
    pub fn new(config: &ScenarioConfig, token: Option<String>, requested: String) -> (Arc<Hub>, Receiver<Command>) {
        let (tx, rx) = std::sync::mpsc::channel();
        let (frames, _) = broadcast::channel(BROADCAST_CAPACITY);
        let vehicles = config
            .vehicles
            .iter()
            .map(|v| {
                (
                    v.id.clone(),
                    VehicleEntry {
                        id: v.id.clone(),
                        spec: v.spec.clone(),
                        external: v.external,
                        link: v.link,
                    },
                )
            })
            .collect();
        let plans = config
            .vehicles
            .iter()
            .map(|v| (v.id.clone(), Plan { mission: v.mission.clone() }))
            .collect();
        let hub = Hub {
            token,
            origin: config.origin,
            dt: config.dt,
            vehicles,
            commands: Mutex::new(tx),
            frames,
            latest: RwLock::new(BTreeMap::new()),
            plans: Mutex::new(plans),
            ghosts: Mutex::new(BTreeMap::new()),
            clock_bits: AtomicU64::new(0f64.to_bits()),
            tick: AtomicU64::new(0),
            started: Instant::now(),
            requested,
            finished: RwLock::new(None),
            connections: AtomicUsize::new(0),
        };
        (Arc::new(hub), rx)
    }

    pub fn auth_required(&self) -> bool {
        self.token.is_some()
    }

    pub fn check_token(&self, token: Option<&str>) -> bool {
        match &self.token {
            None => true,
            Some(t) => token == Some(t.as_str()),
        }
    }

    pub fn vehicle(&self, id: &str) -> Option<&VehicleEntry> {
        self.vehicles.get(id)
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleEntry> {
        self.vehicles.values()
    }

    /// Current simulated time.
    pub fn now(&self) -> f64 {
        f64::from_bits(self.clock_bits.load(Ordering::Acquire))
    }

    pub fn subscribe_frames(&self) -> broadcast::Receiver<Arc<Frame>> {
        self.frames.subscribe()
    }

    pub fn connection_opened(&self) {
        self.connections.fetch_add(1, Ordering::Relaxed);
    }

    pub fn connection_closed(&self) {
        self.connections.fetch_sub(1, Ordering::Relaxed);
    }

    /// Validates an operator command and queues it for the next tick.
    pub fn queue(&self, command: Command) -> Result<(), FrameError> {
        let Some(entry) = self.vehicle(command.vehicle()) else {
            return Err(FrameError::new(ErrorCode::UnknownTopic, format!("unknown vehicle '{}'", command.vehicle())));
        };
        match &command {
            Command::SetMission { mission, .. } => {
                mission
                    .validate()
                    .map_err(|e| FrameError::new(ErrorCode::InvalidCommand, e.to_string()))?;
            }
            Command::SetActuators { commands, .. } => {
                let n = entry.spec.n_actuators();
                if commands.len() != n || commands.iter().any(|c| !c.is_finite()) {
                    return Err(FrameError::new(
                        ErrorCode::InvalidCommand,
                        format!("expected {n} finite actuator setpoints, got {}", commands.len()),
                    ));
                }
            }
            Command::InjectState { state, .. } => {
                if !entry.external {
                    return Err(FrameError::new(
                        ErrorCode::NotExternallyDriven,
                        format!("vehicle '{}' is not externally driven", entry.id),
                    ));
                }
                let p = state.pose.position;
                let finite = [p.x, p.y, p.z].iter().all(|v| v.is_finite())
                    && state.pose.orientation.coords.iter().all(|v| v.is_finite())
                    && state.nu.is_finite();
                if !finite {
                    return Err(FrameError::new(ErrorCode::InvalidCommand, "injected state must be finite"));
                }
            }
            _ => {}
        }
        self.commands
            .lock()
            .expect("command queue lock")
            .send(command.clone())
            .map_err(|_| FrameError::new(ErrorCode::InvalidCommand, "simulation has finished"))?;
        let mut plans = self.plans.lock().expect("plan lock");
        let plan = plans.get_mut(command.vehicle()).expect("known vehicle");
        match command {
            Command::SetMission { mission, .. } => plan.mission = Some(mission),
            Command::Abort { .. } => {
                if let Some(m) = plan.mission.as_mut() {
                    m.abort();
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Dead-reckoned state of `id` at `t` (default: now).
    pub fn ghost(&self, id: &str, t: Option<f64>) -> Result<Frame, FrameError> {
        let now = self.now();
        let mut ghosts = self.ghosts.lock().expect("ghost lock");
        let track = ghosts
            .get_mut(id)
            .ok_or_else(|| FrameError::new(ErrorCode::NoTelemetryYet, format!("no telemetry received for '{id}'")))?;
        let t = t.unwrap_or(now);
        Ok(ghost_frame(id, track, t, now))
    }

    /// Latest frames on topics matched by `pattern`.
    pub fn latest(&self, pattern: &TopicPattern) -> Vec<Frame> {
        self.latest
            .read()
            .expect("latest lock")
            .iter()
            .filter(|(topic, _)| pattern.matches(topic))
            .map(|(_, f)| f.clone())
            .collect()
    }

    fn publish(&self, frame: Frame) {
        self.latest
            .write()
            .expect("latest lock")
            .insert(frame.topic.clone(), frame.clone());
        let _ = self.frames.send(Arc::new(frame));
    }

    fn on_telemetry(&self, update: &TelemetryUpdate, t: f64) {
        let id = update.vehicle.as_str();
        let Some(entry) = self.vehicle(id) else { return };
        let (state, status, mut payload) = match &update.payload {
            TelemetryPayload::Full { state, status } => (
                state.clone(),
                *status,
                json!({"link": "direct", "pose": state.pose, "nu": state.nu, "status": status}),
            ),
            TelemetryPayload::Compressed(c) => {
                let state = c.to_state();
                (
                    state.clone(),
                    c.status(),
                    json!({
                        "link": "acoustic",
                        "pose": state.pose,
                        "status": c.status(),
                        "bytes": c.encode().len(),
                        "encoded": hex::encode(c.encode()),
                        "compressed": c.to_json(),
                    }),
                )
            }
        };
        payload["predicted"] = Value::Bool(false);
        payload["sample_time"] = json!(update.sample_time);
        payload["received_time"] = json!(update.received_time);
        self.publish(Frame::new(FrameType::Telemetry, topic(id, Channel::Telemetry), payload, t));

        let plan = self.plans.lock().expect("plan lock").get(id).cloned().and_then(|p| p.mission);
        let mut ghosts = self.ghosts.lock().expect("ghost lock");
        let previous = ghosts.get(id).and_then(|g| g.status);
        let vertical = entry.spec.domain != Domain::Surface;
        let track = ghosts.entry(id.to_string()).or_insert_with(|| GhostTrack {
            dr: DeadReckonState::new(
                state.clone(),
                update.sample_time,
                Mission::new("", vec![]),
                entry.spec.kinematic,
                self.origin,
                vertical,
            ),
            status,
        });
        let next_plan = rebase_plan(track, plan, status, update.sample_time);
        track.dr.update(strip_actuators(state), update.sample_time, next_plan);
        track.status = status;
        drop(ghosts);

        if status != previous {
            self.publish(Frame::new(
                FrameType::MissionStatus,
                topic(id, Channel::Mission),
                json!({"status": status, "sample_time": update.sample_time}),
                t,
            ));
        }
    }

    fn publish_ghosts(&self, t: f64) {
        let frames: Vec<Frame> = {
            let mut ghosts = self.ghosts.lock().expect("ghost lock");
            ghosts.iter_mut().map(|(id, track)| ghost_frame(id, track, t, t)).collect()
        };
        for f in frames {
            self.publish(f);
        }
    }

    fn set_clock(&self, tick: u64, t: f64) {
        self.tick.store(tick, Ordering::Release);
        self.clock_bits.store(t.to_bits(), Ordering::Release);
    }

    pub fn finish(&self, outcome: Result<RunStats, String>) {
        *self.finished.write().expect("finished lock") = Some(outcome);
    }

    /// Health summary served on `/healthz`.
    pub fn health(&self) -> Value {
        let tick = self.tick.load(Ordering::Acquire);
        let t = self.now();
        let wall = self.started.elapsed().as_secs_f64().max(1e-9);
        let finished = self.finished.read().expect("finished lock").clone();
        let (status, stats, error) = match finished {
            None => ("running", Value::Null, Value::Null),
            Some(Ok(stats)) => ("finished", serde_json::to_value(stats).expect("stats serialize"), Value::Null),
            Some(Err(e)) => ("failed", Value::Null, Value::String(e)),
        };
        json!({
            "status": status,
            "ticks": tick,
            "sim_time": t,
            "dt": self.dt,
            "wall_time": wall,
            "rt_factor": t / wall,
            "requested": self.requested,
            "vehicles": self.vehicles.len(),
            "connections": self.connections.load(Ordering::Relaxed),
            "stats": stats,
            "error": error,
        })
    }
}

/// Ghosts propagate position only; actuator state is not reported.
fn strip_actuators(mut state: RigidBodyState) -> RigidBodyState {
    state.actuators.clear();
    state
}

/// Plan the ghost continues from after a report. Keeps the ghost's own task
/// progress when it agrees with the reported task, otherwise restarts the
/// reported task from the reported position.
fn rebase_plan(track: &mut GhostTrack, plan: Option<Mission>, status: Option<MissionStatus>, t: f64) -> Mission {
    let Some(plan) = plan else {
        let mut idle = Mission::new("", vec![]);
        idle.status = MissionStatus::Done;
        return idle;
    };
    let (_, predicted) = track.dr.predict(t);
    if predicted.id == plan.id && Some(predicted.status) == status {
        return predicted;
    }
    let mut fresh = Mission::new(plan.id.clone(), plan.tasks.clone());
    fresh.created_by = plan.created_by.clone();
    fresh.status = match (status, plan.status) {
        (Some(s), _) => s,
        (None, s) => s,
    };
    if plan.status == MissionStatus::Aborted {
        fresh.status = MissionStatus::Aborted;
    }
    fresh
}

fn ghost_frame(id: &str, track: &mut GhostTrack, t: f64, now: f64) -> Frame {
    let (state, mission) = track.dr.predict(t);
    Frame::new(
        FrameType::Ghost,
        topic(id, Channel::Ghost),
        json!({
            "predicted": true,
            "pose": state.pose,
            "nu": state.nu,
            "status": mission.status,
            "at": t,
            "last_update": track.dr.last_time,
            "age": (t - track.dr.last_time).max(0.0),
        }),
        now,
    )
}

/// Connects a running kernel to the hub: drains queued commands before each
/// tick and publishes telemetry and ghosts after it.
pub struct GatewayObserver {
    hub: Arc<Hub>,
    commands: Receiver<Command>,
    ghost_every: Option<u64>,
}

impl GatewayObserver {
    pub fn new(hub: Arc<Hub>, commands: Receiver<Command>, config: &ScenarioConfig) -> Self {
        let rate = config.c2.ghost_rate;
        let ghost_every = (rate > 0.0).then(|| ((1.0 / (rate * config.dt)).round() as u64).max(1));
        Self {
            hub,
            commands,
            ghost_every,
        }
    }
}

impl TickObserver for GatewayObserver {
    fn before_tick(&mut self, world: &mut World) {
        while let Ok(c) = self.commands.try_recv() {
            world.submit(c);
        }
    }

    fn after_tick(&mut self, _world: &World, report: &TickReport) {
        self.hub.set_clock(report.tick, report.t);
        for update in &report.telemetry {
            self.hub.on_telemetry(update, report.t);
        }
        if self.ghost_every.is_some_and(|k| report.tick.is_multiple_of(k)) {
            self.hub.publish_ghosts(report.t);
        }
    }
}
