//! Scenario documents: a declarative description of one multi-vehicle run.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::KernelError;
use crate::acoustics::ChannelParams;
use crate::dynamics::{RigidBodyState, MAX_DYNAMIC_DT};
use crate::environment::{load_bathymetry, Environment, EnvironmentError, FlowField};
use crate::gateway::LinkPolicy;
use crate::geomath::{BodyVelocity, GeoPoint, Pose, Vec3};
use crate::guidance::{Mission, Target};
use crate::vehicles::{load_vehicle_spec, vehicle_spec_from_value, VehicleError, VehicleSpec};

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_DECIMATION: u64 = 10;

/// Wall-clock pacing of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TimeScale {
    /// Simulated time advances `k` times faster than wall time.
    Factor(f64),
    /// Unpaced.
    #[default]
    Max,
}

impl fmt::Display for TimeScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeScale::Factor(k) => write!(f, "{k}"),
            TimeScale::Max => f.write_str("max"),
        }
    }
}

impl FromStr for TimeScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("max") {
            return Ok(TimeScale::Max);
        }
        match s.parse::<f64>() {
            Ok(k) if k > 0.0 && k.is_finite() => Ok(TimeScale::Factor(k)),
            _ => Err(format!("time scale must be a positive number or 'max', got '{s}'")),
        }
    }
}

impl Serialize for TimeScale {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TimeScale::Factor(k) => s.serialize_f64(*k),
            TimeScale::Max => s.serialize_str("max"),
        }
    }
}

impl<'de> Deserialize<'de> for TimeScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(k) => TimeScale::from_str(&k.to_string()),
            Raw::Text(s) => TimeScale::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Operator-side settings.
#[derive(Debug, Clone, PartialEq)]
pub struct C2Config {
    /// Local position of the operator's acoustic modem.
    pub position: Vec3,
    /// Shared token for commands and state injection; `None` disables both checks and injection.
    pub token: Option<String>,
    /// Ghost publication rate in Hz of simulated time.
    pub ghost_rate: f64,
}

impl Default for C2Config {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            token: None,
            ghost_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VehicleConfig {
    pub id: String,
    pub spec: Arc<VehicleSpec>,
    pub initial: RigidBodyState,
    pub mission: Option<Mission>,
    pub link: LinkPolicy,
    /// Driven by injected external state rather than its own dynamics.
    pub external: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub origin: GeoPoint,
    pub environment: Environment,
    pub channel: ChannelParams,
    pub vehicles: Vec<VehicleConfig>,
    pub dt: f64,
    pub duration: f64,
    pub time_scale: TimeScale,
    pub seed: u64,
    pub log_decimation: u64,
    /// Worker threads for the per-vehicle phase.
    pub threads: usize,
    pub c2: C2Config,
}

impl ScenarioConfig {
    /// An empty world around `origin`.
    pub fn empty(origin: GeoPoint, duration: f64) -> Self {
        Self {
            name: String::new(),
            origin,
            environment: Environment::default(),
            channel: ChannelParams::default(),
            vehicles: Vec::new(),
            dt: DEFAULT_DT,
            duration,
            time_scale: TimeScale::Max,
            seed: 0,
            log_decimation: DEFAULT_DECIMATION,
            threads: 1,
            c2: C2Config::default(),
        }
    }

    pub fn total_ticks(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn vehicle_index(&self, id: &str) -> Option<usize> {
        self.vehicles.iter().position(|v| v.id == id)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(schema("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(schema("duration", "must be non-negative"));
        }
        if self.log_decimation == 0 {
            return Err(schema("log_decimation", "must be at least 1"));
        }
        if self.threads == 0 {
            return Err(schema("threads", "must be at least 1"));
        }
        self.channel
            .validate()
            .map_err(|e| schema("channel", e.to_string()))?;
        self.environment
            .flow
            .validate()
            .map_err(|e| schema("environment.flow", e.to_string()))?;
        let mut ids = HashSet::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            if !ids.insert(v.id.as_str()) {
                return Err(schema(format!("vehicles[{i}].id"), format!("duplicate vehicle id '{}'", v.id)));
            }
            if v.id == super::C2_NODE {
                return Err(schema(format!("vehicles[{i}].id"), format!("'{}' is reserved", super::C2_NODE)));
            }
            if v.spec.uses_dynamics() && self.dt > MAX_DYNAMIC_DT {
                return Err(schema("dt", format!("dynamic vehicles need dt <= {MAX_DYNAMIC_DT}")));
            }
            if let Some(m) = &v.mission {
                m.validate()
                    .map_err(|e| schema(format!("vehicles[{i}].mission"), e.to_string()))?;
            }
            v.link
                .validate()
                .map_err(|e| schema(format!("vehicles[{i}].link"), e.to_string()))?;
        }
        Ok(())
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> KernelError {
    KernelError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_decimation() -> u64 {
    DEFAULT_DECIMATION
}
fn default_ghost_rate() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    #[serde(default)]
    name: String,
    #[serde(default)]
    description: Option<String>,
    origin: GeoPoint,
    #[serde(default)]
    environment: EnvironmentDoc,
    #[serde(default)]
    channel: ChannelParams,
    #[serde(default)]
    vehicles: Vec<VehicleEntryDoc>,
    #[serde(default = "default_dt")]
    dt: f64,
    duration: f64,
    #[serde(default)]
    time_scale: TimeScale,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_decimation")]
    log_decimation: u64,
    #[serde(default)]
    threads: Option<usize>,
    #[serde(default)]
    c2: C2Doc,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EnvironmentDoc {
    #[serde(default)]
    bathymetry: Option<String>,
    #[serde(default)]
    flow: FlowField,
    #[serde(default)]
    water_density: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct C2Doc {
    #[serde(default)]
    position: [f64; 3],
    #[serde(default)]
    token: Option<String>,
    #[serde(default = "default_ghost_rate")]
    ghost_rate: f64,
}

impl Default for C2Doc {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            token: None,
            ghost_rate: default_ghost_rate(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecRef {
    Path(String),
    Inline(serde_json::Value),
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct InitialDoc {
    #[serde(default)]
    position: Option<Target>,
    /// Radians from north.
    #[serde(default)]
    heading: f64,
    #[serde(default)]
    velocity: Option<[f64; 6]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleEntryDoc {
    #[serde(default)]
    id: Option<String>,
    spec: SpecRef,
    #[serde(default)]
    initial: InitialDoc,
    #[serde(default)]
    mission: Option<Mission>,
    #[serde(default)]
    link: Option<LinkPolicy>,
    #[serde(default)]
    external: bool,
}

/// Reads and validates a scenario file; relative asset paths resolve
/// against the scenario's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, KernelError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => KernelError::MissingAsset {
            path: path.display().to_string(),
        },
        _ => KernelError::Io {
            path: path.display().to_string(),
            source: e,
        },
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_scenario(&text, &base)
}

pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<ScenarioConfig, KernelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    let _ = doc.description;
    doc.origin.validate().map_err(|e| schema("origin", e.to_string()))?;

    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };

    let bathymetry = match &doc.environment.bathymetry {
        None => None,
        Some(p) => {
            let path = resolve(p);
            if !path.exists() {
                return Err(KernelError::MissingAsset {
                    path: path.display().to_string(),
                });
            }
            Some(load_bathymetry(&path).map_err(|e| match e {
                EnvironmentError::Io { .. } => KernelError::MissingAsset {
                    path: path.display().to_string(),
                },
                other => schema("environment.bathymetry", other.to_string()),
            })?)
        }
    };
    let environment = Environment {
        bathymetry,
        flow: doc.environment.flow,
        water_density: doc.environment.water_density,
    };

    let mut vehicles = Vec::with_capacity(doc.vehicles.len());
    for (i, v) in doc.vehicles.into_iter().enumerate() {
        let field = format!("vehicles[{i}].spec");
        let spec = match v.spec {
            SpecRef::Path(p) => {
                let path = resolve(&p);
                let text = std::fs::read_to_string(&path).map_err(|_| KernelError::MissingAsset {
                    path: path.display().to_string(),
                })?;
                load_vehicle_spec(&text)
            }
            SpecRef::Inline(value) => vehicle_spec_from_value(value),
        }
        .map_err(|e| match e {
            VehicleError::Schema { path, message } => schema(format!("{field}.{path}"), message),
            other => schema(field.clone(), other.to_string()),
        })?;
        let id = v.id.unwrap_or_else(|| spec.id.clone());
        let position = match &v.initial.position {
            Some(t) => t
                .resolve(&doc.origin)
                .map_err(|e| schema(format!("vehicles[{i}].initial.position"), e.to_string()))?,
            None => Vec3::zeros(),
        };
        let mut initial = RigidBodyState::at_rest(
            Pose::from_euler(position, 0.0, 0.0, v.initial.heading),
            spec.n_actuators(),
        );
        if let Some(nu) = v.initial.velocity {
            initial.nu = BodyVelocity::from_array(nu);
        }
        let link = v.link.unwrap_or(if spec.acoustic {
            LinkPolicy::acoustic_default()
        } else {
            LinkPolicy::Direct { rate: 1.0 }
        });
        vehicles.push(VehicleConfig {
            id,
            spec: Arc::new(spec),
            initial,
            mission: v.mission,
            link,
            external: v.external,
        });
    }

    let config = ScenarioConfig {
        name: doc.name,
        origin: doc.origin,
        environment,
        channel: doc.channel,
        vehicles,
        dt: doc.dt,
        duration: doc.duration,
        time_scale: doc.time_scale,
        seed: doc.seed,
        log_decimation: doc.log_decimation,
        threads: doc.threads.unwrap_or(1),
        c2: C2Config {
            position: Vec3::from(doc.c2.position),
            token: doc.c2.token,
            ghost_rate: doc.c2.ghost_rate,
        },
    };
    config.validate()?;
    Ok(config)
}
