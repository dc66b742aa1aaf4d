//! Vehicle specifications, actuator limits and sensor models.
//!
//! Specs are JSON documents; see `docs/vehicle-spec.md` for the schema.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use nalgebra::{Matrix3, Matrix6, Vector6};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    ControlSurfaceSpec, FidelityLevel, ModelError, ModelParams, QuadrotorParams, RigidBodyState,
    ThrusterSpec, VehicleModel,
};
use crate::environment::EnvironmentSample;
use crate::geomath::{rotate_body_to_world, Vec3};
use crate::guidance::AutopilotGains;
use crate::rng::{keyed_rng, purpose, stable_hash};
use crate::sim2real::ResidualModel;

#[derive(Debug, Error)]
pub enum VehicleError {
    #[error("schema error at '{path}': {message}")]
    Schema { path: String, message: String },
    #[error("invalid model: {0}")]
    ModelInvalid(#[from] ModelError),
    #[error("unknown actuator '{0}'")]
    UnknownActuator(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> VehicleError {
    VehicleError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Underwater,
    Surface,
    Aerial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Imu,
    DepthCell,
    Dvl,
    Gnss,
    Compass,
}

impl SensorKind {
    fn code(self) -> u64 {
        self as u64 + 1
    }

    fn channels(self) -> usize {
        match self {
            SensorKind::Imu => 6,
            SensorKind::DepthCell => 1,
            SensorKind::Dvl => 3,
            SensorKind::Gnss => 2,
            SensorKind::Compass => 1,
        }
    }
}

fn default_gnss_depth() -> f64 {
    0.5
}
fn default_dvl_range() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub rate: f64,
    /// One sigma per channel, or a single value applied to every channel.
    #[serde(default)]
    pub noise_sigma: Vec<f64>,
    #[serde(default = "default_dvl_range")]
    pub dvl_max_range: f64,
    #[serde(default = "default_gnss_depth")]
    pub gnss_max_depth: f64,
}

impl SensorSpec {
    pub fn sigma(&self, channel: usize) -> f64 {
        match self.noise_sigma.len() {
            0 => 0.0,
            1 => self.noise_sigma[0],
            _ => self.noise_sigma.get(channel).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub vehicle: String,
    pub kind: SensorKind,
    pub timestamp: f64,
    pub values: Vec<f64>,
    pub valid: bool,
}

/// How the three autopilot channels drive one actuator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelMix {
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub depth: f64,
}

/// Response constants for the kinematic fidelity level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicParams {
    #[serde(default = "KinematicParams::default_tau")]
    pub response_tau: f64,
    #[serde(default = "KinematicParams::default_max_speed")]
    pub max_speed: f64,
    #[serde(default = "KinematicParams::default_yaw_rate")]
    pub max_yaw_rate: f64,
    #[serde(default = "KinematicParams::default_heave")]
    pub max_heave_rate: f64,
    #[serde(default = "KinematicParams::default_heading_gain")]
    pub heading_gain: f64,
    #[serde(default = "KinematicParams::default_depth_gain")]
    pub depth_gain: f64,
}

impl KinematicParams {
    fn default_tau() -> f64 {
        1.0
    }
    fn default_max_speed() -> f64 {
        2.5
    }
    fn default_yaw_rate() -> f64 {
        0.3
    }
    fn default_heave() -> f64 {
        0.5
    }
    fn default_heading_gain() -> f64 {
        1.0
    }
    fn default_depth_gain() -> f64 {
        0.3
    }
}

impl Default for KinematicParams {
    fn default() -> Self {
        Self {
            response_tau: Self::default_tau(),
            max_speed: Self::default_max_speed(),
            max_yaw_rate: Self::default_yaw_rate(),
            max_heave_rate: Self::default_heave(),
            heading_gain: Self::default_heading_gain(),
            depth_gain: Self::default_depth_gain(),
        }
    }
}

/// Physical realization of a vehicle.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Plant {
    Marine(VehicleModel),
    Quadrotor(QuadrotorParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpec {
    pub id: String,
    pub domain: Domain,
    pub fidelity: FidelityLevel,
    pub plant: Option<Plant>,
    pub kinematic: KinematicParams,
    pub autopilot: AutopilotGains,
    /// One entry per actuator, thrusters first.
    pub mix: Vec<ChannelMix>,
    pub sensors: Vec<SensorSpec>,
    pub draft: f64,
    /// Height of the above-water profile used for wind sampling.
    pub freeboard: f64,
    pub acoustic: bool,
    pub residual: Option<ResidualModel>,
}

impl VehicleSpec {
    pub fn marine_model(&self) -> Option<&VehicleModel> {
        match &self.plant {
            Some(Plant::Marine(m)) => Some(m),
            _ => None,
        }
    }

    /// Names of actuator command slots, in command-vector order.
    pub fn actuator_names(&self) -> Vec<String> {
        match &self.plant {
            Some(Plant::Marine(m)) => m
                .params()
                .thrusters
                .iter()
                .map(|t| t.name.clone())
                .chain(m.params().surfaces.iter().map(|s| s.name.clone()))
                .collect(),
            Some(Plant::Quadrotor(_)) => ["thrust", "roll", "pitch", "yaw_rate"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn n_actuators(&self) -> usize {
        match &self.plant {
            Some(Plant::Marine(m)) => m.n_actuators(),
            Some(Plant::Quadrotor(_)) => crate::dynamics::QUAD_COMMANDS,
            None => 0,
        }
    }

    /// Symmetric limit for each actuator slot.
    pub fn actuator_limits(&self) -> Vec<(f64, f64)> {
        match &self.plant {
            Some(Plant::Marine(m)) => m
                .params()
                .thrusters
                .iter()
                .map(|t| (-t.max_thrust, t.max_thrust))
                .chain(m.params().surfaces.iter().map(|s| (-s.max_deflection, s.max_deflection)))
                .collect(),
            Some(Plant::Quadrotor(q)) => vec![
                (0.0, q.max_thrust),
                (-q.max_tilt, q.max_tilt),
                (-q.max_tilt, q.max_tilt),
                (-q.max_yaw_rate, q.max_yaw_rate),
            ],
            None => Vec::new(),
        }
    }

    pub fn uses_dynamics(&self) -> bool {
        self.fidelity == FidelityLevel::Dynamic && self.plant.is_some()
    }
}

/// Clamped actuator commands and how many were limited.
#[derive(Debug, Clone, PartialEq)]
pub struct Actuation {
    pub commands: Vec<f64>,
    pub clamped: usize,
}

/// Maps named raw commands onto the actuator vector, clamping to limits.
/// Actuators without a command are set to zero.
pub fn actuate(spec: &VehicleSpec, raw: &BTreeMap<String, f64>) -> Result<Actuation, VehicleError> {
    let names = spec.actuator_names();
    let mut values = vec![0.0; names.len()];
    for (name, v) in raw {
        let idx = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| VehicleError::UnknownActuator(name.clone()))?;
        values[idx] = *v;
    }
    Ok(clamp_commands(spec, &values))
}

pub fn clamp_commands(spec: &VehicleSpec, values: &[f64]) -> Actuation {
    let mut clamped = 0;
    let commands = spec
        .actuator_limits()
        .iter()
        .zip(values)
        .map(|((lo, hi), v)| {
            let v = if v.is_finite() { *v } else { 0.0 };
            let c = v.clamp(*lo, *hi);
            if c != v {
                clamped += 1;
            }
            c
        })
        .collect();
    Actuation { commands, clamped }
}

fn sensor_period_ticks(rate: f64, dt: f64) -> u64 {
    ((1.0 / (rate * dt)).round() as u64).max(1)
}

/// Readings due at `tick` from every sensor on the vehicle.
///
/// Noise for channel `c` of sensor `i` is drawn from the stream keyed by
/// `(seed, vehicle id, sensor kind, sensor index, tick)`.
pub fn sense(
    spec: &VehicleSpec,
    vehicle_id: &str,
    state: &RigidBodyState,
    env: &EnvironmentSample,
    seed: u64,
    tick: u64,
    dt: f64,
) -> Vec<SensorReading> {
    let t = tick as f64 * dt;
    let mut out = Vec::new();
    let vid = stable_hash(vehicle_id);
    for (i, s) in spec.sensors.iter().enumerate() {
        if !tick.is_multiple_of(sensor_period_ticks(s.rate, dt)) {
            continue;
        }
        let (truth, valid) = true_measurement(s, state, env);
        let mut rng = keyed_rng(&[seed, purpose::SENSOR, vid, s.kind.code(), i as u64, tick]);
        let values = truth
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let n: f64 = StandardNormal.sample(&mut rng);
                v + s.sigma(c) * n
            })
            .collect();
        out.push(SensorReading {
            vehicle: vehicle_id.to_string(),
            kind: s.kind,
            timestamp: t,
            values,
            valid,
        });
    }
    out
}

pub fn gnss_valid(depth: f64, max_depth: f64) -> bool {
    depth <= max_depth
}

fn true_measurement(s: &SensorSpec, state: &RigidBodyState, env: &EnvironmentSample) -> (Vec<f64>, bool) {
    let p = &state.pose.position;
    let (roll, pitch, yaw) = state.pose.euler();
    let mut v = match s.kind {
        SensorKind::Imu => vec![
            state.nu.angular.x,
            state.nu.angular.y,
            state.nu.angular.z,
            roll,
            pitch,
            yaw,
        ],
        SensorKind::DepthCell => vec![p.z],
        SensorKind::Dvl => vec![state.nu.linear.x, state.nu.linear.y, state.nu.linear.z],
        SensorKind::Gnss => vec![p.x, p.y],
        SensorKind::Compass => vec![yaw],
    };
    debug_assert_eq!(v.len(), s.kind.channels());
    let valid = match s.kind {
        SensorKind::Gnss => gnss_valid(p.z, s.gnss_max_depth),
        SensorKind::Dvl => env
            .seabed_depth
            .map(|seabed| seabed - p.z <= s.dvl_max_range && p.z >= 0.0)
            .unwrap_or(false),
        _ => true,
    };
    if !valid {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    (v, valid)
}

/// World-frame velocity of a vehicle state.
pub fn world_velocity(state: &RigidBodyState) -> Vec3 {
    rotate_body_to_world(&state.pose.orientation, &state.nu.linear)
}

// ---------------------------------------------------------------------------
// JSON documents

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixDoc {
    Diagonal(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl MatrixDoc {
    fn to_dense(&self, n: usize, field: &str) -> Result<Vec<f64>, VehicleError> {
        let mut out = vec![0.0; n * n];
        match self {
            MatrixDoc::Diagonal(d) => {
                if d.len() != n {
                    return Err(schema(field, format!("diagonal needs {n} entries, found {}", d.len())));
                }
                for i in 0..n {
                    out[i * n + i] = d[i];
                }
            }
            MatrixDoc::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(schema(field, format!("expected a {n}x{n} matrix")));
                }
                for (i, r) in rows.iter().enumerate() {
                    out[i * n..(i + 1) * n].copy_from_slice(r);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThrusterDoc {
    name: String,
    position: [f64; 3],
    direction: [f64; 3],
    max_thrust: f64,
    #[serde(default)]
    time_constant: f64,
    #[serde(default)]
    mix: ChannelMix,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceDoc {
    name: String,
    position: [f64; 3],
    area: f64,
    lift_slope: f64,
    #[serde(default)]
    drag_coeff0: f64,
    max_deflection: f64,
    hinge_axis: [f64; 3],
    #[serde(default)]
    mix: ChannelMix,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    mass: f64,
    inertia: MatrixDoc,
    #[serde(default)]
    added_mass: Option<MatrixDoc>,
    #[serde(default)]
    damping_linear: Option<MatrixDoc>,
    #[serde(default)]
    damping_quadratic: Option<[f64; 6]>,
    #[serde(default)]
    cog: [f64; 3],
    #[serde(default)]
    cob: [f64; 3],
    #[serde(default)]
    weight: Option<f64>,
    #[serde(default)]
    buoyancy: Option<f64>,
    #[serde(default)]
    thrusters: Vec<ThrusterDoc>,
    #[serde(default)]
    surfaces: Vec<SurfaceDoc>,
    #[serde(default)]
    wind_area: [f64; 3],
    #[serde(default)]
    wind_drag_coeff: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleDoc {
    id: String,
    domain: Domain,
    #[serde(default)]
    fidelity: Option<FidelityLevel>,
    #[serde(default)]
    model: Option<ModelDoc>,
    #[serde(default)]
    quadrotor: Option<QuadrotorParams>,
    #[serde(default)]
    kinematic: Option<KinematicParams>,
    #[serde(default)]
    autopilot: Option<AutopilotGains>,
    #[serde(default)]
    sensors: Vec<SensorSpec>,
    #[serde(default)]
    draft: f64,
    #[serde(default)]
    freeboard: f64,
    #[serde(default)]
    acoustic: Option<bool>,
    #[serde(default)]
    residual: Option<ResidualModel>,
    #[serde(default)]
    description: Option<String>,
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn build_model(doc: ModelDoc) -> Result<(VehicleModel, Vec<ChannelMix>), VehicleError> {
    let inertia = Matrix3::from_row_slice(&doc.inertia.to_dense(3, "model.inertia")?);
    let dense6 = |m: &Option<MatrixDoc>, field: &str| -> Result<Matrix6<f64>, VehicleError> {
        Ok(match m {
            Some(m) => Matrix6::from_row_slice(&m.to_dense(6, field)?),
            None => Matrix6::zeros(),
        })
    };
    let weight = doc.weight.unwrap_or(doc.mass * crate::dynamics::GRAVITY);
    let mut names = HashSet::new();
    let mut mix = Vec::new();
    let mut thrusters = Vec::new();
    for (i, t) in doc.thrusters.into_iter().enumerate() {
        if !names.insert(t.name.clone()) {
            return Err(schema(format!("model.thrusters[{i}].name"), format!("duplicate actuator name '{}'", t.name)));
        }
        mix.push(t.mix);
        thrusters.push(ThrusterSpec {
            name: t.name,
            position: vec3(t.position),
            direction: vec3(t.direction),
            max_thrust: t.max_thrust,
            time_constant: t.time_constant,
        });
    }
    let mut surfaces = Vec::new();
    for (i, s) in doc.surfaces.into_iter().enumerate() {
        if !names.insert(s.name.clone()) {
            return Err(schema(format!("model.surfaces[{i}].name"), format!("duplicate actuator name '{}'", s.name)));
        }
        mix.push(s.mix);
        surfaces.push(ControlSurfaceSpec {
            name: s.name,
            position: vec3(s.position),
            area: s.area,
            lift_slope: s.lift_slope,
            drag_coeff0: s.drag_coeff0,
            max_deflection: s.max_deflection,
            hinge_axis: vec3(s.hinge_axis),
        });
    }
    let params = ModelParams {
        mass: doc.mass,
        inertia,
        added_mass: dense6(&doc.added_mass, "model.added_mass")?,
        damping_linear: dense6(&doc.damping_linear, "model.damping_linear")?,
        damping_quadratic: Vector6::from(doc.damping_quadratic.unwrap_or([0.0; 6])),
        cog: vec3(doc.cog),
        cob: vec3(doc.cob),
        weight,
        buoyancy: doc.buoyancy.unwrap_or(weight),
        thrusters,
        surfaces,
        wind_area: vec3(doc.wind_area),
        wind_drag_coeff: doc.wind_drag_coeff,
    };
    Ok((VehicleModel::new(params)?, mix))
}

/// Parses and validates a vehicle spec document.
pub fn load_vehicle_spec(document: &str) -> Result<VehicleSpec, VehicleError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: VehicleDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    spec_from_doc(doc)
}

pub fn load_vehicle_spec_file(path: &Path) -> Result<VehicleSpec, VehicleError> {
    let text = std::fs::read_to_string(path).map_err(|source| VehicleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_vehicle_spec(&text)
}

/// Parses a spec from an already-decoded JSON value (inline scenario specs).
pub fn vehicle_spec_from_value(value: serde_json::Value) -> Result<VehicleSpec, VehicleError> {
    let doc: VehicleDoc = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    spec_from_doc(doc)
}

fn spec_from_doc(doc: VehicleDoc) -> Result<VehicleSpec, VehicleError> {
    let _ = doc.description;
    if doc.id.trim().is_empty() {
        return Err(schema("id", "must not be empty"));
    }
    let acoustic = doc.acoustic.unwrap_or(doc.domain == Domain::Underwater);
    if doc.domain == Domain::Aerial && acoustic {
        return Err(schema("acoustic", "aerial vehicles cannot carry acoustic modems"));
    }
    if doc.model.is_some() && doc.quadrotor.is_some() {
        return Err(schema("model", "give either 'model' or 'quadrotor', not both"));
    }
    if doc.draft < 0.0 {
        return Err(schema("draft", "must be non-negative"));
    }
    for (i, s) in doc.sensors.iter().enumerate() {
        if !(s.rate > 0.0) {
            return Err(schema(format!("sensors[{i}].rate"), "must be positive"));
        }
        if s.noise_sigma.iter().any(|v| !(*v >= 0.0)) {
            return Err(schema(format!("sensors[{i}].noise_sigma"), "must be non-negative"));
        }
    }
    let (plant, mix) = match (doc.model, doc.quadrotor) {
        (Some(m), None) => {
            if doc.domain == Domain::Aerial {
                return Err(schema("model", "aerial vehicles use the 'quadrotor' model"));
            }
            let (model, mix) = build_model(m)?;
            (Some(Plant::Marine(model)), mix)
        }
        (None, Some(q)) => {
            if doc.domain != Domain::Aerial {
                return Err(schema("quadrotor", "only aerial vehicles use the quadrotor model"));
            }
            if !(q.mass > 0.0) {
                return Err(VehicleError::ModelInvalid(ModelError::NonPositiveMass(q.mass)));
            }
            if !(q.max_thrust > 0.0 && q.attitude_tau > 0.0 && q.max_tilt > 0.0) {
                return Err(schema("quadrotor", "max_thrust, attitude_tau and max_tilt must be positive"));
            }
            (Some(Plant::Quadrotor(q)), Vec::new())
        }
        _ => (None, Vec::new()),
    };
    let fidelity = doc.fidelity.unwrap_or(if plant.is_some() {
        FidelityLevel::Dynamic
    } else {
        FidelityLevel::Kinematic
    });
    if fidelity == FidelityLevel::Dynamic && plant.is_none() {
        return Err(schema("fidelity", "dynamic fidelity requires a 'model' or 'quadrotor' section"));
    }
    let kinematic = doc.kinematic.unwrap_or_default();
    if !(kinematic.response_tau >= 0.0 && kinematic.max_speed > 0.0) {
        return Err(schema("kinematic", "response_tau must be >= 0 and max_speed > 0"));
    }
    let spec = VehicleSpec {
        id: doc.id,
        domain: doc.domain,
        fidelity,
        plant,
        kinematic,
        autopilot: doc.autopilot.unwrap_or_default(),
        mix,
        sensors: doc.sensors,
        draft: doc.draft,
        freeboard: doc.freeboard,
        acoustic,
        residual: None,
    };
    match doc.residual {
        Some(r) => crate::sim2real::attach(&spec, r).map_err(|e| schema("residual", e.to_string())),
        None => Ok(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomath::Pose;

    const KINEMATIC_ASV: &str = r#"{ "id": "asv1", "domain": "surface" }"#;

    fn auv_doc(mass: f64) -> String {
        format!(
            r#"{{
            "id": "auv", "domain": "underwater",
            "model": {{
                "mass": {mass}, "inertia": [0.2, 2.0, 2.0],
                "added_mass": [1, 20, 20, 0.1, 2, 2],
                "damping_quadratic": [3, 40, 40, 0.5, 5, 5],
                "thrusters": [{{"name": "prop", "position": [-0.7, 0, 0], "direction": [1, 0, 0], "max_thrust": 20, "mix": {{"speed": 1}}}}],
                "surfaces": [{{"name": "rudder", "position": [-0.6, 0, 0], "area": 0.01, "lift_slope": 3.0, "max_deflection": 0.3, "hinge_axis": [0, 0, 1], "mix": {{"heading": 1}}}}]
            }},
            "sensors": [
                {{"kind": "gnss", "rate": 1.0, "noise_sigma": [0.0]}},
                {{"kind": "depth_cell", "rate": 10.0, "noise_sigma": [0.0]}}
            ]
        }}"#
        )
    }

    #[test]
    fn minimal_kinematic_surface_vessel() {
        let s = load_vehicle_spec(KINEMATIC_ASV).unwrap();
        assert_eq!(s.domain, Domain::Surface);
        assert_eq!(s.fidelity, FidelityLevel::Kinematic);
        assert!(!s.acoustic);
        assert_eq!(s.kinematic, KinematicParams::default());
        assert!(s.sensors.is_empty());
    }

    #[test]
    fn dynamic_auv_parses() {
        let s = load_vehicle_spec(&auv_doc(20.0)).unwrap();
        assert_eq!(s.fidelity, FidelityLevel::Dynamic);
        assert!(s.acoustic);
        assert_eq!(s.actuator_names(), vec!["prop", "rudder"]);
        assert_eq!(s.mix[1].heading, 1.0);
    }

    #[test]
    fn negative_mass_is_model_invalid() {
        let err = load_vehicle_spec(&auv_doc(-5.0)).unwrap_err();
        assert!(matches!(err, VehicleError::ModelInvalid(ModelError::NonPositiveMass(_))), "{err}");
    }

    #[test]
    fn duplicate_thruster_names_rejected() {
        let doc = r#"{"id": "x", "domain": "surface", "model": {"mass": 10, "inertia": [1,1,1],
            "thrusters": [
              {"name": "a", "position": [0,0,0], "direction": [1,0,0], "max_thrust": 5},
              {"name": "a", "position": [0,1,0], "direction": [1,0,0], "max_thrust": 5}]}}"#;
        match load_vehicle_spec(doc).unwrap_err() {
            VehicleError::Schema { path, .. } => assert_eq!(path, "model.thrusters[1].name"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn schema_error_carries_field_path() {
        let doc = r#"{"id": "x", "domain": "surface", "sensors": [{"kind": "sonar", "rate": 1}]}"#;
        match load_vehicle_spec(doc).unwrap_err() {
            VehicleError::Schema { path, .. } => assert!(path.starts_with("sensors[0]"), "{path}"),
            e => panic!("{e}"),
        }
        let doc = r#"{"id": "x", "domain": "aerial", "acoustic": true}"#;
        assert!(matches!(load_vehicle_spec(doc), Err(VehicleError::Schema { .. })));
    }

    #[test]
    fn actuation_clamps_and_rejects_unknown() {
        let s = load_vehicle_spec(&auv_doc(20.0)).unwrap();
        let mut raw = BTreeMap::new();
        raw.insert("prop".to_string(), 40.0);
        let a = actuate(&s, &raw).unwrap();
        assert_eq!(a.commands, vec![20.0, 0.0]);
        assert_eq!(a.clamped, 1);

        raw.insert("prop".to_string(), 5.0);
        raw.insert("rudder".to_string(), -0.1);
        let a = actuate(&s, &raw).unwrap();
        assert_eq!(a.commands, vec![5.0, -0.1]);
        assert_eq!(a.clamped, 0);

        raw.insert("bow_thruster".to_string(), 1.0);
        assert!(matches!(actuate(&s, &raw), Err(VehicleError::UnknownActuator(n)) if n == "bow_thruster"));
    }

    fn state_at_depth(z: f64) -> RigidBodyState {
        RigidBodyState::at_rest(Pose::from_euler(Vec3::new(3.0, 4.0, z), 0.0, 0.0, 0.5), 2)
    }

    #[test]
    fn noiseless_readings_equal_truth() {
        let s = load_vehicle_spec(&auv_doc(20.0)).unwrap();
        let st = state_at_depth(0.2);
        let r = sense(&s, "auv", &st, &EnvironmentSample::still_water(), 1, 0, 0.01);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].values, vec![3.0, 4.0]);
        assert!(r[0].valid);
        assert_eq!(r[1].values, vec![0.2]);
    }

    #[test]
    fn gnss_invalid_underwater() {
        let s = load_vehicle_spec(&auv_doc(20.0)).unwrap();
        let r = sense(&s, "auv", &state_at_depth(5.0), &EnvironmentSample::still_water(), 1, 0, 0.01);
        let gnss = r.iter().find(|r| r.kind == SensorKind::Gnss).unwrap();
        assert!(!gnss.valid);
    }

    #[test]
    fn sensor_rates_follow_ticks() {
        let s = load_vehicle_spec(&auv_doc(20.0)).unwrap();
        let env = EnvironmentSample::still_water();
        let st = state_at_depth(1.0);
        // depth cell at 10 Hz with dt = 0.01 is due every 10 ticks; gnss every 100.
        let counts: Vec<usize> = (0..200).map(|k| sense(&s, "auv", &st, &env, 0, k, 0.01).len()).collect();
        assert_eq!(counts.iter().sum::<usize>(), 20 + 2);
    }

    fn noisy_spec(sigma: f64) -> VehicleSpec {
        let mut s = load_vehicle_spec(KINEMATIC_ASV).unwrap();
        s.sensors.push(SensorSpec {
            kind: SensorKind::DepthCell,
            rate: 100.0,
            noise_sigma: vec![sigma],
            dvl_max_range: 50.0,
            gnss_max_depth: 0.5,
        });
        s
    }

    #[test]
    fn noise_is_reproducible_per_seed() {
        let s = noisy_spec(0.1);
        let env = EnvironmentSample::still_water();
        let st = state_at_depth(2.0);
        let run = |seed| -> Vec<f64> {
            (0..50).map(|k| sense(&s, "asv1", &st, &env, seed, k, 0.01)[0].values[0]).collect()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn empirical_sigma_within_three_percent() {
        let sigma = 0.25;
        let s = noisy_spec(sigma);
        let env = EnvironmentSample::still_water();
        let st = state_at_depth(0.0);
        let n = 100_000u64;
        let samples: Vec<f64> = (0..n).map(|k| sense(&s, "asv1", &st, &env, 9, k, 0.01)[0].values[0]).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let est = var.sqrt();
        assert!((est - sigma).abs() / sigma < 0.03, "sigma estimate {est}");
        assert!(mean.abs() < 5.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn gnss_threshold_is_pure() {
        assert!(gnss_valid(0.5, 0.5));
        assert!(!gnss_valid(0.51, 0.5));
        assert!(gnss_valid(-3.0, 0.5));
    }
}
