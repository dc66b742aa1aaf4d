//! On-board guidance: line-of-sight steering, PID autopilots, mission
//! execution, survey expansion, and the operator-side dead-reckoning ghost.
//!
//! Headings are NED (0 = north, positive clockwise seen from above) and are
//! always wrapped to (-pi, pi].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{step_kinematic, QuadrotorParams, RigidBodyState, GRAVITY};
use crate::geomath::{geodetic_to_local, wrap_angle, BodyVelocity, GeoError, GeoPoint, Vec3};
use crate::vehicles::{world_velocity, KinematicParams};

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("leg start and end coincide")]
    DegenerateLeg,
    #[error("track spacing {spacing} m exceeds survey width {width} m")]
    SpacingTooLarge { spacing: f64, width: f64 },
    #[error("invalid task {index}: {message}")]
    InvalidTask { index: usize, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// A mission point given either in the local frame or geodetically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Local { north: f64, east: f64, depth: f64 },
    Geo(GeoPoint),
}

impl Target {
    pub fn local(north: f64, east: f64, depth: f64) -> Self {
        Target::Local { north, east, depth }
    }

    pub fn resolve(&self, origin: &GeoPoint) -> Result<Vec3, GeoError> {
        match self {
            Target::Local { north, east, depth } => Ok(Vec3::new(*north, *east, *depth)),
            Target::Geo(g) => geodetic_to_local(origin, g),
        }
    }
}

fn default_acceptance() -> f64 {
    2.0
}
fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Task {
    Goto {
        target: Target,
        speed: f64,
        #[serde(default = "default_acceptance")]
        acceptance_radius: f64,
        /// Start of the tracked line; defaults to where the task begins.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<Target>,
    },
    Loiter {
        point: Target,
        radius: f64,
        duration: f64,
        #[serde(default = "default_speed")]
        speed: f64,
    },
    /// Lawnmower over the rectangle spanning `length` m north and `width` m
    /// east of `corner`; legs run north-south and step east.
    Survey {
        corner: Target,
        length: f64,
        width: f64,
        track_spacing: f64,
        depth: f64,
        speed: f64,
        #[serde(default = "default_acceptance")]
        acceptance_radius: f64,
    },
    Surface,
    Abort,
}

impl Task {
    pub fn validate(&self, index: usize) -> Result<(), GuidanceError> {
        let bad = |m: &str| {
            Err(GuidanceError::InvalidTask {
                index,
                message: m.to_string(),
            })
        };
        match self {
            Task::Goto {
                speed,
                acceptance_radius,
                ..
            } => {
                if !(*speed > 0.0) {
                    return bad("speed must be positive");
                }
                if !(*acceptance_radius > 0.0) {
                    return bad("acceptance_radius must be positive");
                }
            }
            Task::Loiter {
                radius,
                duration,
                speed,
                ..
            } => {
                if !(*radius > 0.0 && *duration >= 0.0 && *speed > 0.0) {
                    return bad("loiter needs radius > 0, duration >= 0, speed > 0");
                }
            }
            Task::Survey {
                length,
                width,
                track_spacing,
                speed,
                acceptance_radius,
                ..
            } => {
                if !(*length > 0.0 && *width > 0.0) {
                    return bad("survey extent must be positive");
                }
                if !(*track_spacing > 0.0) {
                    return bad("track_spacing must be positive");
                }
                if *track_spacing > *width {
                    return Err(GuidanceError::SpacingTooLarge {
                        spacing: *track_spacing,
                        width: *width,
                    });
                }
                if !(*speed > 0.0 && *acceptance_radius > 0.0) {
                    return bad("speed and acceptance_radius must be positive");
                }
            }
            Task::Surface | Task::Abort => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "index", rename_all = "snake_case")]
pub enum MissionStatus {
    Pending,
    Running(usize),
    Done,
    Aborted,
}

impl MissionStatus {
    fn rank(&self) -> (u8, usize) {
        match self {
            MissionStatus::Pending => (0, 0),
            MissionStatus::Running(i) => (1, *i),
            MissionStatus::Done | MissionStatus::Aborted => (2, 0),
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, MissionStatus::Done | MissionStatus::Aborted)
    }

    pub fn task_index(&self) -> Option<usize> {
        match self {
            MissionStatus::Running(i) => Some(*i),
            _ => None,
        }
    }
}

/// Execution bookkeeping for the current task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskProgress {
    #[serde(default)]
    pub leg_start: Option<Vec3>,
    #[serde(default)]
    pub waypoints: Vec<Vec3>,
    #[serde(default)]
    pub sub_index: usize,
    #[serde(default)]
    pub loiter_since: Option<f64>,
    #[serde(default)]
    pub hold_depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub id: String,
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub created_by: String,
    #[serde(default = "pending")]
    pub status: MissionStatus,
    #[serde(default)]
    pub progress: TaskProgress,
}

fn pending() -> MissionStatus {
    MissionStatus::Pending
}

impl Mission {
    pub fn new(id: impl Into<String>, tasks: Vec<Task>) -> Self {
        Self {
            id: id.into(),
            tasks,
            created_by: String::new(),
            status: MissionStatus::Pending,
            progress: TaskProgress::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate(i)?;
        }
        Ok(())
    }

    /// Preempts everything; the vehicle surfaces.
    pub fn abort(&mut self) {
        self.status = MissionStatus::Aborted;
    }

    fn advance_to(&mut self, next: MissionStatus) {
        debug_assert!(next.rank() >= self.status.rank());
        self.status = next;
        let hold = self.progress.hold_depth;
        self.progress = TaskProgress {
            hold_depth: hold,
            ..Default::default()
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetpointMode {
    Track,
    Hold,
    Surface,
}

/// Desired heading/depth/speed handed to the autopilot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoints {
    pub heading: f64,
    pub depth: f64,
    pub speed: f64,
    pub mode: SetpointMode,
}

/// Lookahead distance used for all path following.
pub const LOS_LOOKAHEAD: f64 = 8.0;

/// Line-of-sight heading toward the point `lookahead` meters past the
/// along-track projection of `pos` onto the leg.
pub fn los_heading(pos: &Vec3, leg_start: &Vec3, leg_end: &Vec3, lookahead: f64) -> Result<f64, GuidanceError> {
    let dn = leg_end.x - leg_start.x;
    let de = leg_end.y - leg_start.y;
    if dn.hypot(de) < 1e-9 {
        return Err(GuidanceError::DegenerateLeg);
    }
    let path = de.atan2(dn);
    let cross = -(pos.x - leg_start.x) * path.sin() + (pos.y - leg_start.y) * path.cos();
    Ok(wrap_angle(path + (-cross).atan2(lookahead)))
}

pub fn cross_track_error(pos: &Vec3, leg_start: &Vec3, leg_end: &Vec3) -> f64 {
    let path = (leg_end.y - leg_start.y).atan2(leg_end.x - leg_start.x);
    -(pos.x - leg_start.x) * path.sin() + (pos.y - leg_start.y) * path.cos()
}

fn horizontal_distance(a: &Vec3, b: &Vec3) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

fn bearing(from: &Vec3, to: &Vec3) -> f64 {
    (to.y - from.y).atan2(to.x - from.x)
}

/// Expands a survey task into alternating north/south legs, two waypoints per leg.
pub fn expand_survey(task: &Task, origin: &GeoPoint) -> Result<Vec<Task>, GuidanceError> {
    let Task::Survey {
        corner,
        length,
        width,
        track_spacing,
        depth,
        speed,
        acceptance_radius,
    } = task
    else {
        return Err(GuidanceError::InvalidTask {
            index: 0,
            message: "not a survey".into(),
        });
    };
    let points = survey_points(&corner.resolve(origin)?, *length, *width, *track_spacing, *depth)?;
    Ok(points
        .into_iter()
        .map(|p| Task::Goto {
            target: Target::local(p.x, p.y, p.z),
            speed: *speed,
            acceptance_radius: *acceptance_radius,
            from: None,
        })
        .collect())
}

pub fn survey_points(corner: &Vec3, length: f64, width: f64, spacing: f64, depth: f64) -> Result<Vec<Vec3>, GuidanceError> {
    if !(length > 0.0 && width > 0.0 && spacing > 0.0) {
        return Err(GuidanceError::InvalidTask {
            index: 0,
            message: "survey extent and spacing must be positive".into(),
        });
    }
    if spacing > width {
        return Err(GuidanceError::SpacingTooLarge { spacing, width });
    }
    let legs = (width / spacing + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(2 * legs);
    for k in 0..legs {
        let east = corner.y + k as f64 * spacing;
        let (a, b) = if k % 2 == 0 { (0.0, length) } else { (length, 0.0) };
        out.push(Vec3::new(corner.x + a, east, depth));
        out.push(Vec3::new(corner.x + b, east, depth));
    }
    Ok(out)
}

/// One guidance update. Returns the setpoints and the (possibly advanced) status.
pub fn mission_step(
    mission: &mut Mission,
    state: &RigidBodyState,
    t: f64,
    origin: &GeoPoint,
) -> Result<(Setpoints, MissionStatus), GuidanceError> {
    let pos = state.pose.position;
    let yaw = state.pose.heading();
    if mission.status == MissionStatus::Pending {
        if mission.tasks.is_empty() {
            mission.advance_to(MissionStatus::Done);
        } else {
            mission.advance_to(MissionStatus::Running(0));
        }
    }
    // Several tasks may complete in one update; each pass either returns or advances.
    for _ in 0..=mission.tasks.len() + 1 {
        let index = match mission.status {
            MissionStatus::Running(i) => i,
            MissionStatus::Aborted => {
                return Ok((
                    Setpoints {
                        heading: yaw,
                        depth: 0.0,
                        speed: 0.0,
                        mode: SetpointMode::Surface,
                    },
                    mission.status,
                ));
            }
            MissionStatus::Done | MissionStatus::Pending => {
                let depth = *mission.progress.hold_depth.get_or_insert(pos.z);
                return Ok((
                    Setpoints {
                        heading: yaw,
                        depth,
                        speed: 0.0,
                        mode: SetpointMode::Hold,
                    },
                    mission.status,
                ));
            }
        };
        let task = mission.tasks[index].clone();
        if mission.progress.leg_start.is_none() {
            mission.progress.leg_start = Some(pos);
        }
        let next = if index + 1 < mission.tasks.len() {
            MissionStatus::Running(index + 1)
        } else {
            MissionStatus::Done
        };
        match task {
            Task::Abort => {
                mission.abort();
            }
            Task::Surface => {
                if pos.z <= 0.5 {
                    mission.progress.hold_depth = Some(0.0);
                    mission.advance_to(next);
                } else {
                    return Ok((
                        Setpoints {
                            heading: yaw,
                            depth: 0.0,
                            speed: 0.0,
                            mode: SetpointMode::Surface,
                        },
                        mission.status,
                    ));
                }
            }
            Task::Goto {
                target,
                speed,
                acceptance_radius,
                from,
            } => {
                let goal = target.resolve(origin)?;
                if horizontal_distance(&pos, &goal) <= acceptance_radius {
                    mission.progress.hold_depth = Some(goal.z);
                    mission.advance_to(next);
                    continue;
                }
                let start = match from {
                    Some(f) => f.resolve(origin)?,
                    None => mission.progress.leg_start.unwrap_or(pos),
                };
                return Ok((track(&pos, &start, &goal, speed), mission.status));
            }
            Task::Survey { .. } => {
                if mission.progress.waypoints.is_empty() {
                    let Task::Survey {
                        corner,
                        length,
                        width,
                        track_spacing,
                        depth,
                        ..
                    } = &task
                    else {
                        unreachable!()
                    };
                    mission.progress.waypoints =
                        survey_points(&corner.resolve(origin)?, *length, *width, *track_spacing, *depth)?;
                }
                let Task::Survey {
                    speed,
                    acceptance_radius,
                    ..
                } = task
                else {
                    unreachable!()
                };
                let k = mission.progress.sub_index;
                let goal = mission.progress.waypoints[k];
                if horizontal_distance(&pos, &goal) <= acceptance_radius {
                    if k + 1 < mission.progress.waypoints.len() {
                        mission.progress.sub_index += 1;
                        mission.progress.leg_start = Some(goal);
                        continue;
                    }
                    mission.progress.hold_depth = Some(goal.z);
                    mission.advance_to(next);
                    continue;
                }
                let start = mission.progress.leg_start.unwrap_or(pos);
                return Ok((track(&pos, &start, &goal, speed), mission.status));
            }
            Task::Loiter {
                point,
                radius,
                duration,
                speed,
            } => {
                let center = point.resolve(origin)?;
                let dist = horizontal_distance(&pos, &center);
                if mission.progress.loiter_since.is_none() && dist <= radius * 1.2 + 1.0 {
                    mission.progress.loiter_since = Some(t);
                }
                if let Some(since) = mission.progress.loiter_since {
                    if t - since >= duration {
                        mission.progress.hold_depth = Some(center.z);
                        mission.advance_to(next);
                        continue;
                    }
                    let radial = bearing(&center, &pos);
                    let heading = wrap_angle(
                        radial + std::f64::consts::FRAC_PI_2 + (dist - radius).atan2(LOS_LOOKAHEAD),
                    );
                    return Ok((
                        Setpoints {
                            heading,
                            depth: center.z,
                            speed,
                            mode: SetpointMode::Track,
                        },
                        mission.status,
                    ));
                }
                let start = mission.progress.leg_start.unwrap_or(pos);
                return Ok((track(&pos, &start, &center, speed), mission.status));
            }
        }
    }
    Ok((
        Setpoints {
            heading: yaw,
            depth: pos.z,
            speed: 0.0,
            mode: SetpointMode::Hold,
        },
        mission.status,
    ))
}

fn track(pos: &Vec3, start: &Vec3, goal: &Vec3, speed: f64) -> Setpoints {
    let heading = los_heading(pos, start, goal, LOS_LOOKAHEAD).unwrap_or_else(|_| bearing(pos, goal));
    Setpoints {
        heading,
        depth: goal.z,
        speed,
        mode: SetpointMode::Track,
    }
}

// ---------------------------------------------------------------------------
// Autopilot

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    #[serde(default)]
    pub kp: f64,
    #[serde(default)]
    pub ki: f64,
    #[serde(default)]
    pub kd: f64,
    #[serde(default = "PidGains::unbounded")]
    pub integral_limit: f64,
    #[serde(default = "PidGains::unbounded")]
    pub output_limit: f64,
}

impl PidGains {
    fn unbounded() -> f64 {
        f64::INFINITY
    }

    pub fn p(kp: f64) -> Self {
        Self {
            kp,
            ki: 0.0,
            kd: 0.0,
            integral_limit: f64::INFINITY,
            output_limit: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutopilotGains {
    pub heading: PidGains,
    /// Depth error to commanded pitch (rad); output_limit is the pitch limit.
    pub depth: PidGains,
    /// Inner pitch loop: `kp * (pitch_cmd - pitch) - kd * q`.
    pub pitch: PidGains,
    pub speed: PidGains,
    /// Steady-state thrust model `ff_linear * U + ff_quadratic * U|U|`.
    #[serde(default)]
    pub speed_ff_linear: f64,
    #[serde(default)]
    pub speed_ff_quadratic: f64,
}

impl Default for AutopilotGains {
    fn default() -> Self {
        Self {
            heading: PidGains {
                kp: 1.0,
                ki: 0.02,
                kd: 1.5,
                integral_limit: 2.0,
                output_limit: f64::INFINITY,
            },
            depth: PidGains {
                kp: 0.15,
                ki: 0.005,
                kd: 0.6,
                integral_limit: 5.0,
                output_limit: 0.35,
            },
            pitch: PidGains {
                kp: 1.5,
                ki: 0.0,
                kd: 1.0,
                integral_limit: 0.0,
                output_limit: f64::INFINITY,
            },
            speed: PidGains {
                kp: 5.0,
                ki: 1.0,
                kd: 0.0,
                integral_limit: 10.0,
                output_limit: f64::INFINITY,
            },
            speed_ff_linear: 0.0,
            speed_ff_quadratic: 0.0,
        }
    }
}

/// Integrator states of the three loops.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AutopilotState {
    pub heading_integral: f64,
    pub depth_integral: f64,
    pub speed_integral: f64,
}

/// Per-channel controller outputs before actuator mixing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelOutputs {
    pub heading: f64,
    pub depth: f64,
    pub speed: f64,
}

fn integrate(acc: &mut f64, error: f64, dt: f64, limit: f64) -> f64 {
    *acc = (*acc + error * dt).clamp(-limit, limit);
    *acc
}

pub fn autopilot_step(
    gains: &AutopilotGains,
    desired: &Setpoints,
    state: &RigidBodyState,
    integrators: &mut AutopilotState,
    dt: f64,
) -> ChannelOutputs {
    let (_, pitch, yaw) = state.pose.euler();
    let nu = &state.nu;

    let g = &gains.heading;
    let e_heading = wrap_angle(desired.heading - yaw);
    let i_heading = integrate(&mut integrators.heading_integral, e_heading, dt, g.integral_limit);
    let heading = (g.kp * e_heading + g.ki * i_heading - g.kd * nu.angular.z).clamp(-g.output_limit, g.output_limit);

    let g = &gains.depth;
    let e_depth = desired.depth - state.pose.position.z;
    let depth_rate = world_velocity(state).z;
    let i_depth = integrate(&mut integrators.depth_integral, e_depth, dt, g.integral_limit);
    let pitch_cmd = -(g.kp * e_depth + g.ki * i_depth - g.kd * depth_rate).clamp(-g.output_limit, g.output_limit);
    let p = &gains.pitch;
    let depth = (p.kp * (pitch_cmd - pitch) - p.kd * nu.angular.y).clamp(-p.output_limit, p.output_limit);

    let g = &gains.speed;
    let u_d = desired.speed;
    let e_speed = u_d - nu.linear.x;
    let i_speed = integrate(&mut integrators.speed_integral, e_speed, dt, g.integral_limit);
    let ff = gains.speed_ff_linear * u_d + gains.speed_ff_quadratic * u_d * u_d.abs();
    let speed = (ff + g.kp * e_speed + g.ki * i_speed).clamp(-g.output_limit, g.output_limit);

    ChannelOutputs { heading, depth, speed }
}

/// Commanded body velocity for kinematic-fidelity vehicles.
pub fn kinematic_command(
    desired: &Setpoints,
    state: &RigidBodyState,
    params: &KinematicParams,
    vertical: bool,
) -> BodyVelocity {
    let yaw = state.pose.heading();
    let r = (params.heading_gain * wrap_angle(desired.heading - yaw)).clamp(-params.max_yaw_rate, params.max_yaw_rate);
    let w = if vertical {
        (params.depth_gain * (desired.depth - state.pose.position.z))
            .clamp(-params.max_heave_rate, params.max_heave_rate)
    } else {
        0.0
    };
    let u = desired.speed.clamp(-params.max_speed, params.max_speed);
    BodyVelocity::from_array([u, 0.0, w, 0.0, 0.0, r])
}

/// Position/velocity controller producing quadrotor commands
/// `[thrust, roll, pitch, yaw_rate]` from the shared setpoints.
pub fn quadrotor_autopilot(desired: &Setpoints, state: &RigidBodyState, params: &QuadrotorParams) -> [f64; 4] {
    let (roll, pitch, yaw) = state.pose.euler();
    let v = world_velocity(state);
    let (k_v, k_z, k_vz) = (1.2, 1.0, 1.8);
    let vd = Vec3::new(desired.speed * desired.heading.cos(), desired.speed * desired.heading.sin(), 0.0);
    let a_n = k_v * (vd.x - v.x);
    let a_e = k_v * (vd.y - v.y);
    let a_z = k_z * (desired.depth - state.pose.position.z) - k_vz * v.z;
    let tilt = (roll.cos() * pitch.cos()).max(0.5);
    let thrust = params.mass * (GRAVITY - a_z) / tilt;
    let (s, c) = yaw.sin_cos();
    let a_fwd = c * a_n + s * a_e;
    let a_right = -s * a_n + c * a_e;
    let pitch_cmd = -a_fwd / GRAVITY;
    let roll_cmd = a_right / GRAVITY;
    let yaw_rate = 1.5 * wrap_angle(desired.heading - yaw);
    [thrust, roll_cmd, pitch_cmd, yaw_rate]
}

// ---------------------------------------------------------------------------
// Dead reckoning

/// Step used when propagating ghosts.
pub const GHOST_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadReckonState {
    pub last_known: RigidBodyState,
    pub last_time: f64,
    pub plan: Mission,
    pub params: KinematicParams,
    pub origin: GeoPoint,
    pub vertical: bool,
    /// Cache of the propagation on the fixed ghost grid.
    #[serde(skip)]
    cursor: Option<(u64, RigidBodyState, Mission)>,
}

impl DeadReckonState {
    pub fn new(
        last_known: RigidBodyState,
        last_time: f64,
        plan: Mission,
        params: KinematicParams,
        origin: GeoPoint,
        vertical: bool,
    ) -> Self {
        Self {
            last_known,
            last_time,
            plan,
            params,
            origin,
            vertical,
            cursor: None,
        }
    }

    /// Snaps to a new report; prediction restarts from it.
    pub fn update(&mut self, state: RigidBodyState, t: f64, plan: Mission) {
        self.last_known = state;
        self.last_time = t;
        self.plan = plan;
        self.cursor = None;
    }

    fn advance(&self, state: &RigidBodyState, mission: &mut Mission, t: f64, h: f64) -> RigidBodyState {
        let (sp, _) = match mission_step(mission, state, t, &self.origin) {
            Ok(v) => v,
            Err(_) => (
                Setpoints {
                    heading: state.pose.heading(),
                    depth: state.pose.position.z,
                    speed: 0.0,
                    mode: SetpointMode::Hold,
                },
                mission.status,
            ),
        };
        let cmd = kinematic_command(&sp, state, &self.params, self.vertical);
        step_kinematic(state, &cmd, self.params.response_tau, h)
    }
}

/// Predicted state at `t`, propagated along the plan from the last report.
pub fn dead_reckon(dr: &mut DeadReckonState, t: f64) -> RigidBodyState {
    dr.predict(t).0
}

impl DeadReckonState {
    /// Predicted state and plan progress at `t`.
    pub fn predict(&mut self, t: f64) -> (RigidBodyState, Mission) {
        if t <= self.last_time {
            return (self.last_known.clone(), self.plan.clone());
        }
        let target_steps = ((t - self.last_time) / GHOST_DT).floor() as u64;
        let (mut k, mut state, mut mission) = match self.cursor.take() {
            Some((k, s, m)) if k <= target_steps => (k, s, m),
            _ => (0, self.last_known.clone(), self.plan.clone()),
        };
        while k < target_steps {
            let tk = self.last_time + k as f64 * GHOST_DT;
            state = self.advance(&state, &mut mission, tk, GHOST_DT);
            k += 1;
        }
        let t_grid = self.last_time + k as f64 * GHOST_DT;
        let rem = t - t_grid;
        let out = if rem > 1e-12 {
            let mut m = mission.clone();
            let s = self.advance(&state, &mut m, t_grid, rem);
            (s, m)
        } else {
            (state.clone(), mission.clone())
        };
        self.cursor = Some((k, state, mission));
        out
    }
}
