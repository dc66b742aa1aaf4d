//! Six degree-of-freedom marine craft dynamics.
//!
//! Body-frame equations of motion
//!
//! ```text
//! M * nu_dot = tau_act + tau_env + coriolis(nu_r) + damping(nu_r) + restoring(eta) + tau_residual
//! ```
//!
//! where `M = M_RB + M_A` and `nu_r = nu - nu_current`. Every `*_wrench`
//! function returns the generalized force *acting on the vehicle*, so terms
//! are summed directly.

use nalgebra::{Matrix3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvironmentSample;
use crate::geomath::{
    integrate_pose, renormalize, rotate_body_to_world, rotate_world_to_body, BodyVelocity, Pose,
    Vec3,
};
use crate::sim2real::ResidualModel;

/// Threshold above which any state component is treated as a blow-up.
pub const BLOWUP_LIMIT: f64 = 1e6;

/// Largest accepted dynamic step.
pub const MAX_DYNAMIC_DT: f64 = 0.05;

pub const AIR_DENSITY: f64 = 1.225;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("deflection {deflection} rad exceeds limit {limit} rad")]
    DeflectionOutOfRange { deflection: f64, limit: f64 },
    #[error("thrust {thrust} N exceeds limit {limit} N")]
    ThrustOutOfRange { thrust: f64, limit: f64 },
    #[error("numerical blow-up: state component reached {value}")]
    NumericalBlowup { value: f64 },
    #[error("time step {0} s outside (0, {MAX_DYNAMIC_DT}]")]
    InvalidTimestep(f64),
    #[error("expected {expected} actuator commands, got {got}")]
    CommandCount { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("inertia tensor is not symmetric positive definite")]
    InertiaNotPositiveDefinite,
    #[error("mass matrix M_RB + M_A is not symmetric positive definite")]
    MassMatrixNotPositiveDefinite,
    #[error("{0} must be non-negative")]
    NegativeCoefficient(&'static str),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("thruster '{0}': {1}")]
    Thruster(String, &'static str),
    #[error("control surface '{0}': {1}")]
    Surface(String, &'static str),
}

/// Generalized force in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(force: Vec3, torque: Vec3) -> Self {
        Self { force, torque }
    }

    /// Force applied at `point` (body frame), with the moment it induces about the origin.
    pub fn at_point(force: Vec3, point: &Vec3) -> Self {
        Self {
            force,
            torque: point.cross(&force),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            force: Vec3::new(v[0], v[1], v[2]),
            torque: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, o: Wrench) -> Wrench {
        Wrench::new(self.force + o.force, self.torque + o.torque)
    }
}

impl std::ops::AddAssign for Wrench {
    fn add_assign(&mut self, o: Wrench) {
        self.force += o.force;
        self.torque += o.torque;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrusterSpec {
    pub name: String,
    pub position: Vec3,
    pub direction: Vec3,
    pub max_thrust: f64,
    /// First-order response time constant; zero means instantaneous.
    #[serde(default)]
    pub time_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSurfaceSpec {
    pub name: String,
    pub position: Vec3,
    pub area: f64,
    pub lift_slope: f64,
    #[serde(default)]
    pub drag_coeff0: f64,
    pub max_deflection: f64,
    pub hinge_axis: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FidelityLevel {
    Kinematic,
    #[default]
    Dynamic,
}

/// Pose, body velocity and the achieved actuator values
/// (thrusts first, then surface deflections, in spec order).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub pose: Pose,
    pub nu: BodyVelocity,
    #[serde(default)]
    pub actuators: Vec<f64>,
}

impl RigidBodyState {
    pub fn at_rest(pose: Pose, n_actuators: usize) -> Self {
        Self {
            pose,
            nu: BodyVelocity::zero(),
            actuators: vec![0.0; n_actuators],
        }
    }

    fn check_finite(&self) -> Result<(), DynamicsError> {
        let p = &self.pose.position;
        let vals = [p.x, p.y, p.z]
            .into_iter()
            .chain(self.nu.to_array())
            .chain(self.actuators.iter().copied());
        for v in vals {
            if !v.is_finite() || v.abs() > BLOWUP_LIMIT {
                return Err(DynamicsError::NumericalBlowup { value: v });
            }
        }
        Ok(())
    }
}

/// Raw model parameters, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub added_mass: Matrix6<f64>,
    pub damping_linear: Matrix6<f64>,
    pub damping_quadratic: Vector6<f64>,
    pub cog: Vec3,
    pub cob: Vec3,
    pub weight: f64,
    pub buoyancy: f64,
    pub thrusters: Vec<ThrusterSpec>,
    pub surfaces: Vec<ControlSurfaceSpec>,
    /// Projected above-surface area per body axis (m^2); zero disables wind load.
    pub wind_area: Vec3,
    pub wind_drag_coeff: f64,
}

impl ModelParams {
    /// Neutrally buoyant body with no hydrodynamic terms or actuators.
    pub fn rigid_body(mass: f64, inertia_diag: Vec3) -> Self {
        let weight = mass * 9.81;
        Self {
            mass,
            inertia: Matrix3::from_diagonal(&inertia_diag),
            added_mass: Matrix6::zeros(),
            damping_linear: Matrix6::zeros(),
            damping_quadratic: Vector6::zeros(),
            cog: Vec3::zeros(),
            cob: Vec3::zeros(),
            weight,
            buoyancy: weight,
            thrusters: Vec::new(),
            surfaces: Vec::new(),
            wind_area: Vec3::zeros(),
            wind_drag_coeff: 0.0,
        }
    }
}

/// Validated vehicle model with its mass matrix and inverse precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleModel {
    params: ModelParams,
    mass_matrix: Matrix6<f64>,
    mass_inverse: Matrix6<f64>,
}

impl VehicleModel {
    pub fn new(params: ModelParams) -> Result<Self, ModelError> {
        let p = &params;
        if !p.mass.is_finite() {
            return Err(ModelError::NonFinite("mass"));
        }
        if p.mass <= 0.0 {
            return Err(ModelError::NonPositiveMass(p.mass));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(p.inertia.as_slice()) {
            return Err(ModelError::NonFinite("inertia"));
        }
        if !finite(p.added_mass.as_slice()) {
            return Err(ModelError::NonFinite("added_mass"));
        }
        if !finite(p.damping_linear.as_slice()) || !finite(p.damping_quadratic.as_slice()) {
            return Err(ModelError::NonFinite("damping"));
        }
        if !(p.weight.is_finite() && p.buoyancy.is_finite()) {
            return Err(ModelError::NonFinite("weight/buoyancy"));
        }
        if !symmetric(p.inertia.as_slice(), 3) || p.inertia.cholesky().is_none() {
            return Err(ModelError::InertiaNotPositiveDefinite);
        }
        if p.damping_linear.diagonal().iter().any(|d| *d < 0.0) {
            return Err(ModelError::NegativeCoefficient("damping_linear"));
        }
        if p.damping_quadratic.iter().any(|d| *d < 0.0) {
            return Err(ModelError::NegativeCoefficient("damping_quadratic"));
        }
        if p.weight < 0.0 || p.buoyancy < 0.0 {
            return Err(ModelError::NegativeCoefficient("weight/buoyancy"));
        }
        if p.wind_area.iter().any(|a| *a < 0.0) || p.wind_drag_coeff < 0.0 {
            return Err(ModelError::NegativeCoefficient("wind_area/wind_drag_coeff"));
        }
        for t in &p.thrusters {
            if ((t.direction.norm() - 1.0).abs()) > 1e-6 {
                return Err(ModelError::Thruster(t.name.clone(), "direction must be a unit vector"));
            }
            if !(t.max_thrust > 0.0) {
                return Err(ModelError::Thruster(t.name.clone(), "max_thrust must be positive"));
            }
            if !(t.time_constant >= 0.0) {
                return Err(ModelError::Thruster(t.name.clone(), "time_constant must be non-negative"));
            }
        }
        for s in &p.surfaces {
            if !(s.area > 0.0) {
                return Err(ModelError::Surface(s.name.clone(), "area must be positive"));
            }
            if !(s.max_deflection > 0.0 && s.max_deflection < std::f64::consts::FRAC_PI_2) {
                return Err(ModelError::Surface(s.name.clone(), "max_deflection must be in (0, pi/2)"));
            }
            if ((s.hinge_axis.norm() - 1.0).abs()) > 1e-6 {
                return Err(ModelError::Surface(s.name.clone(), "hinge_axis must be a unit vector"));
            }
        }
        let mass_matrix = rigid_body_mass(p.mass, &p.inertia, &p.cog) + p.added_mass;
        if !symmetric(mass_matrix.as_slice(), 6) {
            return Err(ModelError::MassMatrixNotPositiveDefinite);
        }
        let chol = mass_matrix
            .cholesky()
            .ok_or(ModelError::MassMatrixNotPositiveDefinite)?;
        let mass_inverse = chol.inverse();
        Ok(Self {
            params,
            mass_matrix,
            mass_inverse,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn mass_matrix(&self) -> &Matrix6<f64> {
        &self.mass_matrix
    }

    pub fn mass_inverse(&self) -> &Matrix6<f64> {
        &self.mass_inverse
    }

    pub fn n_actuators(&self) -> usize {
        self.params.thrusters.len() + self.params.surfaces.len()
    }

    pub fn kinetic_energy(&self, nu: &BodyVelocity) -> f64 {
        let v = Vector6::from(nu.to_array());
        0.5 * v.dot(&(self.mass_matrix * v))
    }
}

fn symmetric(m: &[f64], n: usize) -> bool {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (m[i * n + j] - m[j * n + i]).abs() > 1e-9 * scale {
                return false;
            }
        }
    }
    true
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid-body mass matrix about the body origin for a center of gravity at `cog`.
pub fn rigid_body_mass(mass: f64, inertia: &Matrix3<f64>, cog: &Vec3) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let s = skew(cog) * mass;
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * mass));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-s));
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&s);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(inertia);
    m
}

/// Hydrostatic force and moment from weight acting at `cog` and buoyancy at `cob`.
pub fn restoring_wrench(pose: &Pose, weight: f64, buoyancy: f64, cog: &Vec3, cob: &Vec3) -> Wrench {
    let down = rotate_world_to_body(&pose.orientation, &Vec3::new(0.0, 0.0, 1.0));
    let fg = down * weight;
    let fb = down * -buoyancy;
    Wrench::new(fg + fb, cog.cross(&fg) + cob.cross(&fb))
}

/// `-C(nu_r) nu_r` using the skew-symmetric parameterization built from `M`.
pub fn coriolis_wrench(mass_matrix: &Matrix6<f64>, nu_r: &BodyVelocity) -> Wrench {
    let m11 = mass_matrix.fixed_view::<3, 3>(0, 0);
    let m12 = mass_matrix.fixed_view::<3, 3>(0, 3);
    let m21 = mass_matrix.fixed_view::<3, 3>(3, 0);
    let m22 = mass_matrix.fixed_view::<3, 3>(3, 3);
    let (v, w) = (&nu_r.linear, &nu_r.angular);
    let a = m11 * v + m12 * w;
    let b = m21 * v + m22 * w;
    // C(nu) nu = [ w x a ; v x a + w x b ]
    let force = w.cross(&a);
    let torque = v.cross(&a) + w.cross(&b);
    Wrench::new(-force, -torque)
}

/// `-(D_lin nu_r + diag(D_quad |nu_r|) nu_r)`.
pub fn damping_wrench(
    damping_linear: &Matrix6<f64>,
    damping_quadratic: &Vector6<f64>,
    nu_r: &BodyVelocity,
) -> Wrench {
    let v = Vector6::from(nu_r.to_array());
    let mut out = damping_linear * v;
    for i in 0..6 {
        out[i] += damping_quadratic[i] * v[i].abs() * v[i];
    }
    Wrench::from_vector(&(-out))
}

/// Lift and drag of a control surface under a small-angle, attached-flow model.
///
/// `flow_velocity_body` is the velocity of the fluid relative to the surface.
/// Positive deflection produces lift along `hinge_axis x flow_direction`.
pub fn control_surface_wrench(
    spec: &ControlSurfaceSpec,
    deflection: f64,
    flow_velocity_body: &Vec3,
    rho: f64,
) -> Result<Wrench, DynamicsError> {
    if deflection.abs() > spec.max_deflection * (1.0 + 1e-12) || !deflection.is_finite() {
        return Err(DynamicsError::DeflectionOutOfRange {
            deflection,
            limit: spec.max_deflection,
        });
    }
    let speed_sq = flow_velocity_body.norm_squared();
    if speed_sq == 0.0 {
        return Ok(Wrench::zero());
    }
    let flow_dir = flow_velocity_body / speed_sq.sqrt();
    let q_area = 0.5 * rho * speed_sq * spec.area;
    let lift_axis = spec.hinge_axis.cross(&flow_dir);
    let lift = if lift_axis.norm_squared() > 1e-24 {
        lift_axis.normalize() * (q_area * spec.lift_slope * deflection)
    } else {
        Vec3::zeros()
    };
    let drag = flow_dir * (q_area * (spec.drag_coeff0 + spec.lift_slope * deflection * deflection));
    Ok(Wrench::at_point(lift + drag, &spec.position))
}

pub fn thruster_wrench(spec: &ThrusterSpec, achieved_thrust: f64) -> Result<Wrench, DynamicsError> {
    if achieved_thrust.abs() > spec.max_thrust * (1.0 + 1e-12) || !achieved_thrust.is_finite() {
        return Err(DynamicsError::ThrustOutOfRange {
            thrust: achieved_thrust,
            limit: spec.max_thrust,
        });
    }
    Ok(Wrench::at_point(spec.direction * achieved_thrust, &spec.position))
}

/// Quadratic air drag on the above-surface profile.
pub fn wind_wrench(params: &ModelParams, relative_air_body: &Vec3) -> Wrench {
    if params.wind_drag_coeff == 0.0 {
        return Wrench::zero();
    }
    let k = 0.5 * AIR_DENSITY * params.wind_drag_coeff;
    let f = Vec3::new(
        k * params.wind_area.x * relative_air_body.x.abs() * relative_air_body.x,
        k * params.wind_area.y * relative_air_body.y.abs() * relative_air_body.y,
        k * params.wind_area.z * relative_air_body.z.abs() * relative_air_body.z,
    );
    Wrench::new(f, Vec3::zeros())
}

/// Sum of all generalized forces at a given state with given achieved actuator values,
/// excluding the residual term.
pub fn model_wrench(
    model: &VehicleModel,
    pose: &Pose,
    nu: &BodyVelocity,
    actuators: &[f64],
    env: &EnvironmentSample,
) -> Result<Wrench, DynamicsError> {
    let p = &model.params;
    let current_body = rotate_world_to_body(&pose.orientation, &env.current);
    let nu_r = BodyVelocity::new(nu.linear - current_body, nu.angular);

    let mut total = coriolis_wrench(&model.mass_matrix, &nu_r);
    total += damping_wrench(&p.damping_linear, &p.damping_quadratic, &nu_r);
    total += restoring_wrench(pose, p.weight, p.buoyancy, &p.cog, &p.cob);

    let n_thr = p.thrusters.len();
    for (spec, thrust) in p.thrusters.iter().zip(&actuators[..n_thr]) {
        total += thruster_wrench(spec, *thrust)?;
    }
    for (spec, deflection) in p.surfaces.iter().zip(&actuators[n_thr..]) {
        let local = nu_r.linear + nu_r.angular.cross(&spec.position);
        total += control_surface_wrench(spec, *deflection, &(-local), env.rho)?;
    }
    if p.wind_drag_coeff > 0.0 {
        let air = rotate_world_to_body(&pose.orientation, &env.wind) - nu.linear;
        total += wind_wrench(p, &air);
    }
    Ok(total)
}

/// Advances actuator states toward their setpoints over `dt`.
///
/// Thrusters follow an exactly discretized first-order lag; surfaces move to
/// their (clamped) setpoint immediately.
pub fn advance_actuators(model: &VehicleModel, achieved: &[f64], commands: &[f64], dt: f64) -> Vec<f64> {
    let p = &model.params;
    let n_thr = p.thrusters.len();
    let mut out = Vec::with_capacity(achieved.len());
    for (i, t) in p.thrusters.iter().enumerate() {
        let target = commands[i].clamp(-t.max_thrust, t.max_thrust);
        let next = if t.time_constant <= 0.0 {
            target
        } else {
            let alpha = 1.0 - (-dt / t.time_constant).exp();
            achieved[i] + (target - achieved[i]) * alpha
        };
        out.push(next);
    }
    for (j, s) in p.surfaces.iter().enumerate() {
        out.push(commands[n_thr + j].clamp(-s.max_deflection, s.max_deflection));
    }
    out
}

#[derive(Clone, Copy)]
struct Deriv {
    position: Vec3,
    attitude: nalgebra::Quaternion<f64>,
    nu: Vector6<f64>,
}

fn derivative(
    model: &VehicleModel,
    pose: &Pose,
    nu: &BodyVelocity,
    actuators: &[f64],
    commands: &[f64],
    env: &EnvironmentSample,
    residual: Option<&ResidualModel>,
) -> Result<Deriv, DynamicsError> {
    let mut tau = model_wrench(model, pose, nu, actuators, env)?;
    if let Some(r) = residual {
        tau += r.wrench(nu, commands);
    }
    let nu_dot = model.mass_inverse * tau.to_vector();
    let position = rotate_body_to_world(&pose.orientation, &nu.linear);
    let omega = nalgebra::Quaternion::new(0.0, nu.angular.x, nu.angular.y, nu.angular.z);
    let attitude = pose.orientation.quaternion() * omega * 0.5;
    Ok(Deriv {
        position,
        attitude,
        nu: nu_dot,
    })
}

fn offset(
    pose: &Pose,
    nu: &BodyVelocity,
    d: &Deriv,
    h: f64,
) -> (Pose, BodyVelocity) {
    let q = pose.orientation.quaternion() + d.attitude * h;
    let p = Pose::new(pose.position + d.position * h, renormalize(q));
    let v = Vector6::from(nu.to_array()) + d.nu * h;
    (p, BodyVelocity::from_array(v.into()))
}

/// One fixed RK4 step of the full dynamic model.
///
/// Actuators first advance over `dt` (first-order lag) and are then held
/// constant across the RK4 stages.
pub fn step_dynamic(
    state: &RigidBodyState,
    model: &VehicleModel,
    env: &EnvironmentSample,
    commands: &[f64],
    residual: Option<&ResidualModel>,
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    if !(dt > 0.0 && dt <= MAX_DYNAMIC_DT) {
        return Err(DynamicsError::InvalidTimestep(dt));
    }
    let n = model.n_actuators();
    if commands.len() != n || state.actuators.len() != n {
        return Err(DynamicsError::CommandCount {
            expected: n,
            got: commands.len().min(state.actuators.len()),
        });
    }
    let actuators = advance_actuators(model, &state.actuators, commands, dt);

    let (p0, v0) = (&state.pose, &state.nu);
    let k1 = derivative(model, p0, v0, &actuators, commands, env, residual)?;
    let (p1, v1) = offset(p0, v0, &k1, 0.5 * dt);
    let k2 = derivative(model, &p1, &v1, &actuators, commands, env, residual)?;
    let (p2, v2) = offset(p0, v0, &k2, 0.5 * dt);
    let k3 = derivative(model, &p2, &v2, &actuators, commands, env, residual)?;
    let (p3, v3) = offset(p0, v0, &k3, dt);
    let k4 = derivative(model, &p3, &v3, &actuators, commands, env, residual)?;

    let w = dt / 6.0;
    let position = p0.position + (k1.position + (k2.position + k3.position) * 2.0 + k4.position) * w;
    let q = p0.orientation.quaternion()
        + (k1.attitude + (k2.attitude + k3.attitude) * 2.0 + k4.attitude) * w;
    let nu = Vector6::from(v0.to_array()) + (k1.nu + (k2.nu + k3.nu) * 2.0 + k4.nu) * w;

    let out = RigidBodyState {
        pose: Pose::new(position, renormalize(q)),
        nu: BodyVelocity::from_array(nu.into()),
        actuators,
    };
    out.check_finite()?;
    Ok(out)
}

/// Low-fidelity step: velocity relaxes toward `commanded` with time constant
/// `response_tau`, then the pose integrates with the new velocity.
pub fn step_kinematic(
    state: &RigidBodyState,
    commanded: &BodyVelocity,
    response_tau: f64,
    dt: f64,
) -> RigidBodyState {
    let alpha = if response_tau <= 0.0 {
        1.0
    } else {
        1.0 - (-dt / response_tau).exp()
    };
    let cur = state.nu.to_array();
    let cmd = commanded.to_array();
    let mut next = [0.0; 6];
    for i in 0..6 {
        next[i] = cur[i] + (cmd[i] - cur[i]) * alpha;
    }
    let nu = BodyVelocity::from_array(next);
    RigidBodyState {
        pose: integrate_pose(&state.pose, &nu, dt),
        nu,
        actuators: state.actuators.clone(),
    }
}

/// Simplified multirotor: collective thrust along body -z, attitude tracking
/// its command with a first-order response, quadratic translational drag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub max_thrust: f64,
    #[serde(default = "default_attitude_tau")]
    pub attitude_tau: f64,
    #[serde(default = "default_max_tilt")]
    pub max_tilt: f64,
    #[serde(default = "default_max_yaw_rate")]
    pub max_yaw_rate: f64,
    #[serde(default = "default_quad_drag")]
    pub drag_coeff: f64,
}

fn default_attitude_tau() -> f64 {
    0.15
}
fn default_max_tilt() -> f64 {
    0.5
}
fn default_max_yaw_rate() -> f64 {
    1.5
}
fn default_quad_drag() -> f64 {
    0.3
}

pub const GRAVITY: f64 = 9.81;

/// Quadrotor commands: `[collective thrust N, roll rad, pitch rad, yaw rate rad/s]`.
pub const QUAD_COMMANDS: usize = 4;

pub fn step_quadrotor(
    state: &RigidBodyState,
    params: &QuadrotorParams,
    wind_ned: &Vec3,
    commands: &[f64],
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    if commands.len() != QUAD_COMMANDS {
        return Err(DynamicsError::CommandCount {
            expected: QUAD_COMMANDS,
            got: commands.len(),
        });
    }
    if !(dt > 0.0 && dt <= MAX_DYNAMIC_DT) {
        return Err(DynamicsError::InvalidTimestep(dt));
    }
    let thrust = commands[0].clamp(0.0, params.max_thrust);
    let roll_cmd = commands[1].clamp(-params.max_tilt, params.max_tilt);
    let pitch_cmd = commands[2].clamp(-params.max_tilt, params.max_tilt);
    let yaw_rate_cmd = commands[3].clamp(-params.max_yaw_rate, params.max_yaw_rate);

    let (roll, pitch, yaw) = state.pose.euler();
    let alpha = 1.0 - (-dt / params.attitude_tau).exp();
    let roll_n = roll + (roll_cmd - roll) * alpha;
    let pitch_n = pitch + (pitch_cmd - pitch) * alpha;
    let yaw_n = yaw + yaw_rate_cmd * dt;
    let q = crate::geomath::UnitQuaternion::from_euler_angles(roll_n, pitch_n, yaw_n);

    let v_world = rotate_body_to_world(&state.pose.orientation, &state.nu.linear);
    let accel = |v: &Vec3| -> Vec3 {
        let thrust_world = rotate_body_to_world(&q, &Vec3::new(0.0, 0.0, -thrust));
        let rel = v - wind_ned;
        let drag = rel * (-params.drag_coeff * rel.norm());
        (thrust_world + drag) / params.mass + Vec3::new(0.0, 0.0, GRAVITY)
    };
    let k1 = accel(&v_world);
    let k2 = accel(&(v_world + k1 * (0.5 * dt)));
    let k3 = accel(&(v_world + k2 * (0.5 * dt)));
    let k4 = accel(&(v_world + k3 * dt));
    let mut v_next = v_world + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    let mut position = state.pose.position + (v_world + v_next) * (0.5 * dt);
    if position.z > 0.0 {
        // Resting on the water surface.
        position.z = 0.0;
        v_next.z = v_next.z.min(0.0);
        v_next.x *= 0.5;
        v_next.y *= 0.5;
    }
    let angular = Vec3::new(
        (roll_n - roll) / dt,
        (pitch_n - pitch) / dt,
        yaw_rate_cmd,
    );
    let out = RigidBodyState {
        pose: Pose::new(position, q),
        nu: BodyVelocity::new(rotate_world_to_body(&q, &v_next), angular),
        actuators: vec![thrust, roll_cmd, pitch_cmd, yaw_rate_cmd],
    };
    out.check_finite()?;
    Ok(out)
}
