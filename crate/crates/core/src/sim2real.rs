//! Residual-dynamics pipeline: replay logged trajectories, derive the
//! generalized force the nominal model is missing, fit a linear-in-features
//! correction, and attach it to a vehicle spec.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{model_wrench, step_dynamic, DynamicsError, RigidBodyState, Wrench};
use crate::environment::EnvironmentSample;
use crate::geomath::{BodyVelocity, Pose};
use crate::vehicles::VehicleSpec;

/// Smallest ridge parameter used when the feature matrix is rank deficient.
pub const RIDGE_FLOOR: f64 = 1e-8;

/// Reciprocal condition number below which a fit is flagged rank deficient.
const RCOND_LIMIT: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum Sim2RealError {
    #[error("log dt {log_dt} s is not an integer multiple of sim dt {sim_dt} s")]
    DtMismatch { log_dt: f64, sim_dt: f64 },
    #[error("need at least {needed} samples, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("invalid trajectory log: {0}")]
    InvalidLog(String),
    #[error("vehicle has no dynamic marine model")]
    NoModel,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("json error on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// One regressor of the residual model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Feature {
    /// `nu_i`
    Velocity(usize),
    /// `nu_i * |nu_i|`
    QuadraticVelocity(usize),
    /// Commanded setpoint of actuator `i`.
    Command(usize),
    Bias,
}

impl Feature {
    pub fn eval(&self, nu: &[f64; 6], commands: &[f64]) -> f64 {
        match *self {
            Feature::Velocity(i) => nu[i],
            Feature::QuadraticVelocity(i) => nu[i] * nu[i].abs(),
            Feature::Command(i) => commands[i],
            Feature::Bias => 1.0,
        }
    }
}

/// `[nu (6), nu*|nu| (6), commands (n), bias]`.
pub fn default_features(n_actuators: usize) -> Vec<Feature> {
    (0..6)
        .map(Feature::Velocity)
        .chain((0..6).map(Feature::QuadraticVelocity))
        .chain((0..n_actuators).map(Feature::Command))
        .chain(std::iter::once(Feature::Bias))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitMetadata {
    #[serde(default)]
    pub samples: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub source: String,
}

/// Additive body wrench `coefficients * features(nu, commands)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    pub n_actuators: usize,
    pub features: Vec<Feature>,
    /// Six rows (surge, sway, heave, roll, pitch, yaw), one column per feature.
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default)]
    pub metadata: FitMetadata,
}

impl ResidualModel {
    pub fn zero(features: Vec<Feature>, n_actuators: usize) -> Self {
        let p = features.len();
        Self {
            n_actuators,
            features,
            coefficients: vec![vec![0.0; p]; 6],
            metadata: FitMetadata::default(),
        }
    }

    /// Constant body wrench, expressed as a bias-only model.
    pub fn constant(wrench: &Wrench, n_actuators: usize) -> Self {
        let v = wrench.to_vector();
        Self {
            n_actuators,
            features: vec![Feature::Bias],
            coefficients: (0..6).map(|i| vec![v[i]]).collect(),
            metadata: FitMetadata::default(),
        }
    }

    pub fn validate(&self) -> Result<(), Sim2RealError> {
        let p = self.features.len();
        if self.coefficients.len() != 6 || self.coefficients.iter().any(|r| r.len() != p) {
            return Err(Sim2RealError::FeatureMismatch(format!(
                "coefficients must be 6 x {p} to match the feature list"
            )));
        }
        if self.coefficients.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Sim2RealError::FeatureMismatch("coefficients must be finite".into()));
        }
        for f in &self.features {
            let ok = match f {
                Feature::Velocity(i) | Feature::QuadraticVelocity(i) => *i < 6,
                Feature::Command(i) => *i < self.n_actuators,
                Feature::Bias => true,
            };
            if !ok {
                return Err(Sim2RealError::FeatureMismatch(format!("feature {f:?} out of range")));
            }
        }
        Ok(())
    }

    pub fn feature_row(&self, nu: &BodyVelocity, commands: &[f64]) -> Vec<f64> {
        let v = nu.to_array();
        self.features.iter().map(|f| f.eval(&v, commands)).collect()
    }

    pub fn wrench(&self, nu: &BodyVelocity, commands: &[f64]) -> Wrench {
        let phi = self.feature_row(nu, commands);
        let mut out = [0.0; 6];
        for (axis, row) in self.coefficients.iter().enumerate() {
            out[axis] = row.iter().zip(&phi).map(|(c, f)| c * f).sum();
        }
        Wrench::from_vector(&out.into())
    }
}

/// Attaches a residual model to a spec; the dynamics step then adds its wrench.
pub fn attach(spec: &VehicleSpec, model: ResidualModel) -> Result<VehicleSpec, Sim2RealError> {
    let n = spec.marine_model().ok_or(Sim2RealError::NoModel)?.n_actuators();
    if model.n_actuators != n {
        return Err(Sim2RealError::FeatureMismatch(format!(
            "model built for {} actuators, vehicle has {n}",
            model.n_actuators
        )));
    }
    model.validate()?;
    let mut out = spec.clone();
    out.residual = Some(model);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogSource {
    Sim,
    Real,
}

/// State at `t` plus the commands applied from `t` until the next sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose,
    pub nu: BodyVelocity,
    #[serde(default)]
    pub actuators: Vec<f64>,
    pub commands: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub source: LogSource,
    pub vehicle: String,
    pub samples: Vec<TrajectorySample>,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    source: LogSource,
    id: String,
    #[serde(flatten)]
    sample: TrajectorySample,
}

impl TrajectoryLog {
    pub fn dt(&self) -> f64 {
        if self.samples.len() < 2 {
            return 0.0;
        }
        self.samples[1].t - self.samples[0].t
    }

    pub fn validate(&self) -> Result<(), Sim2RealError> {
        if self.samples.len() < 2 {
            return Err(Sim2RealError::TooFewSamples {
                needed: 2,
                have: self.samples.len(),
            });
        }
        let dt = self.dt();
        for w in self.samples.windows(2) {
            let step = w[1].t - w[0].t;
            if !(step > 0.0) {
                return Err(Sim2RealError::InvalidLog("timestamps must strictly increase".into()));
            }
            if (step - dt).abs() > 0.01 * dt {
                return Err(Sim2RealError::InvalidLog(format!("non-uniform dt: {step} vs {dt}")));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let line = LogLine {
                source: self.source,
                id: self.vehicle.clone(),
                sample: s.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("log line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, Sim2RealError> {
        let mut samples = Vec::new();
        let mut meta: Option<(LogSource, String)> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: LogLine = serde_json::from_str(line).map_err(|source| Sim2RealError::Json { line: i + 1, source })?;
            match &meta {
                None => meta = Some((l.source, l.id.clone())),
                Some((_, id)) if *id != l.id => {
                    return Err(Sim2RealError::InvalidLog(format!("line {}: mixed vehicles '{id}' and '{}'", i + 1, l.id)))
                }
                _ => {}
            }
            samples.push(l.sample);
        }
        let (source, vehicle) = meta.ok_or_else(|| Sim2RealError::InvalidLog("empty log".into()))?;
        let log = Self { source, vehicle, samples };
        log.validate()?;
        Ok(log)
    }

    /// Extracts one vehicle's trajectory from a kernel event log. Records
    /// carry the commands that produced the logged state, so commands shift
    /// back by one record. Only records on the decimation grid are used;
    /// fits are most accurate with decimation 1.
    pub fn from_event_log(text: &str, vehicle: &str) -> Result<Self, Sim2RealError> {
        let mut rows: Vec<(f64, RigidBodyState, Vec<f64>)> = Vec::new();
        let mut decimation = 1;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(line).map_err(|source| Sim2RealError::Json { line: i + 1, source })?;
            match v.get("type").and_then(|t| t.as_str()) {
                Some("header") => {
                    decimation = v["decimation"].as_u64().unwrap_or(1).max(1);
                    continue;
                }
                Some("tick") => {}
                _ => continue,
            }
            // Extra records written for events fall between grid points.
            if !v["tick"].as_u64().unwrap_or(0).is_multiple_of(decimation) {
                continue;
            }
            let t = v["t"].as_f64().unwrap_or(0.0);
            let Some(rec) = v["vehicles"]
                .as_array()
                .and_then(|a| a.iter().find(|r| r["id"] == vehicle))
            else {
                continue;
            };
            let state: RigidBodyState = serde_json::from_value(serde_json::json!({
                "pose": rec["pose"], "nu": rec["nu"], "actuators": rec["actuators"],
            }))
            .map_err(|source| Sim2RealError::Json { line: i + 1, source })?;
            let commands: Vec<f64> = serde_json::from_value(rec["commands"].clone())
                .map_err(|source| Sim2RealError::Json { line: i + 1, source })?;
            rows.push((t, state, commands));
        }
        if rows.len() < 2 {
            return Err(Sim2RealError::TooFewSamples { needed: 2, have: rows.len() });
        }
        let samples = rows
            .windows(2)
            .map(|w| TrajectorySample {
                t: w[0].0,
                pose: w[0].1.pose,
                nu: w[0].1.nu,
                actuators: w[0].1.actuators.clone(),
                commands: w[1].2.clone(),
            })
            .collect();
        let log = Self {
            source: LogSource::Sim,
            vehicle: vehicle.to_string(),
            samples,
        };
        log.validate()?;
        Ok(log)
    }
}

/// Runs the dynamic model open-loop and records every step.
pub fn record_trajectory(
    spec: &VehicleSpec,
    env: &EnvironmentSample,
    initial: RigidBodyState,
    dt: f64,
    steps: usize,
    mut commands: impl FnMut(f64) -> Vec<f64>,
) -> Result<TrajectoryLog, Sim2RealError> {
    let model = spec.marine_model().ok_or(Sim2RealError::NoModel)?;
    let mut state = initial;
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let cmd = commands(t);
        samples.push(TrajectorySample {
            t,
            pose: state.pose,
            nu: state.nu,
            actuators: state.actuators.clone(),
            commands: cmd.clone(),
        });
        if k < steps {
            state = step_dynamic(&state, model, env, &cmd, spec.residual.as_ref(), dt)?;
        }
    }
    Ok(TrajectoryLog {
        source: LogSource::Sim,
        vehicle: spec.id.clone(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub max_position: f64,
    pub mean_position: f64,
    pub max_velocity: f64,
    pub mean_velocity: f64,
    /// Position divergence at every log sample.
    pub position: Vec<f64>,
}

/// Re-simulates from the first sample with the logged commands and compares.
pub fn replay(
    log: &TrajectoryLog,
    spec: &VehicleSpec,
    env: &EnvironmentSample,
    sim_dt: f64,
) -> Result<DivergenceReport, Sim2RealError> {
    log.validate()?;
    let model = spec.marine_model().ok_or(Sim2RealError::NoModel)?;
    let log_dt = log.dt();
    let ratio = log_dt / sim_dt;
    let substeps = ratio.round();
    if substeps < 1.0 || (ratio - substeps).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Sim2RealError::DtMismatch { log_dt, sim_dt });
    }
    let first = &log.samples[0];
    let n_act = model.n_actuators();
    let mut state = RigidBodyState {
        pose: first.pose,
        nu: first.nu,
        actuators: if first.actuators.len() == n_act {
            first.actuators.clone()
        } else {
            vec![0.0; n_act]
        },
    };
    let mut position = vec![0.0];
    let mut velocity = vec![0.0];
    for w in log.samples.windows(2) {
        for _ in 0..substeps as usize {
            state = step_dynamic(&state, model, env, &w[0].commands, spec.residual.as_ref(), sim_dt)?;
        }
        position.push((state.pose.position - w[1].pose.position).norm());
        let dv: f64 = state
            .nu
            .to_array()
            .iter()
            .zip(w[1].nu.to_array())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        velocity.push(dv.sqrt());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(DivergenceReport {
        max_position: position.iter().cloned().fold(0.0, f64::max),
        mean_position: mean(&position),
        max_velocity: velocity.iter().cloned().fold(0.0, f64::max),
        mean_velocity: mean(&velocity),
        position,
    })
}

/// Per-sample wrench the nominal model lacks: `M * nu_dot - tau_model`.
///
/// `nu_dot` uses central differences inside the log and one-sided
/// differences at its ends. The modeled wrench at sample k averages the
/// actuator values at k and k+1, matching the zero-order hold of the
/// logged commands over the two adjacent intervals.
pub fn residual_targets(
    log: &TrajectoryLog,
    spec: &VehicleSpec,
    env: &EnvironmentSample,
) -> Result<Vec<Wrench>, Sim2RealError> {
    let n = log.samples.len();
    if n < 3 {
        return Err(Sim2RealError::TooFewSamples { needed: 3, have: n });
    }
    log.validate()?;
    let model = spec.marine_model().ok_or(Sim2RealError::NoModel)?;
    let n_act = model.n_actuators();
    let s = &log.samples;
    let nu = |k: usize| DVector::from_row_slice(&s[k].nu.to_array());
    let acts = |k: usize| -> Vec<f64> {
        if s[k].actuators.len() == n_act {
            s[k].actuators.clone()
        } else {
            vec![0.0; n_act]
        }
    };
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let nu_dot = if k == 0 {
            (nu(1) - nu(0)) / (s[1].t - s[0].t)
        } else if k == n - 1 {
            (nu(k) - nu(k - 1)) / (s[k].t - s[k - 1].t)
        } else {
            (nu(k + 1) - nu(k - 1)) / (s[k + 1].t - s[k - 1].t)
        };
        let a_now = acts(k);
        let a_next = if k + 1 < n { acts(k + 1) } else { a_now.clone() };
        let tau_a = model_wrench(model, &s[k].pose, &s[k].nu, &a_now, env)?.to_vector();
        let tau_b = model_wrench(model, &s[k].pose, &s[k].nu, &a_next, env)?.to_vector();
        let tau = (tau_a + tau_b) * 0.5;
        let m_nu_dot = model.mass_matrix() * nalgebra::Vector6::from_iterator(nu_dot.iter().copied());
        out.push(Wrench::from_vector(&(m_nu_dot - tau)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub coefficients: Vec<Vec<f64>>,
    pub rms_before: [f64; 6],
    pub rms_after: [f64; 6],
    pub samples: usize,
    pub condition_number: f64,
    pub lambda: f64,
    pub rank_deficient: bool,
}

/// Feature matrix, one row per sample.
pub fn feature_matrix(log: &TrajectoryLog, features: &[Feature]) -> DMatrix<f64> {
    let rows = log.samples.len();
    DMatrix::from_fn(rows, features.len(), |r, c| {
        features[c].eval(&log.samples[r].nu.to_array(), &log.samples[r].commands)
    })
}

/// Per-axis ridge least squares of `targets` on `features`.
///
/// Solved by Householder QR of the augmented system `[X; sqrt(lambda) I]`.
/// If `X` is numerically rank deficient the fit is still returned, using
/// `lambda >= RIDGE_FLOOR`, and flagged in the report.
pub fn fit_residual(
    log: &TrajectoryLog,
    targets: &[Wrench],
    features: &[Feature],
    n_actuators: usize,
    lambda: f64,
) -> Result<(FitReport, ResidualModel), Sim2RealError> {
    let n = targets.len();
    let p = features.len();
    if n != log.samples.len() {
        return Err(Sim2RealError::InvalidLog(format!(
            "{} targets for {} samples",
            n,
            log.samples.len()
        )));
    }
    if n < p {
        return Err(Sim2RealError::TooFewSamples { needed: p, have: n });
    }
    for f in features {
        if let Feature::Command(i) = f {
            if *i >= n_actuators || log.samples.iter().any(|s| s.commands.len() <= *i) {
                return Err(Sim2RealError::FeatureMismatch(format!("command feature {i} not present in log")));
            }
        }
    }
    let x = feature_matrix(log, features);
    let sv = x.singular_values();
    let s_max = sv.iter().cloned().fold(0.0, f64::max);
    let s_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition_number = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    let rank_deficient = !(s_min > RCOND_LIMIT * s_max);
    let lambda = if rank_deficient { lambda.max(RIDGE_FLOOR) } else { lambda.max(0.0) };

    let mut aug = DMatrix::zeros(n + p, p);
    aug.view_mut((0, 0), (n, p)).copy_from(&x);
    for i in 0..p {
        aug[(n + i, i)] = lambda.sqrt();
    }
    let qr = aug.qr();
    let q = qr.q();
    let r = qr.r();

    let mut coefficients = vec![vec![0.0; p]; 6];
    let mut rms_before = [0.0; 6];
    let mut rms_after = [0.0; 6];
    for axis in 0..6 {
        let y = DVector::from_iterator(n, targets.iter().map(|w| w.to_vector()[axis]));
        let mut y_aug = DVector::zeros(n + p);
        y_aug.rows_mut(0, n).copy_from(&y);
        let qty = q.transpose() * &y_aug;
        let beta = r
            .solve_upper_triangular(&qty)
            .unwrap_or_else(|| DVector::zeros(p));
        let resid = &y - &x * &beta;
        rms_before[axis] = (y.norm_squared() / n as f64).sqrt();
        rms_after[axis] = (resid.norm_squared() / n as f64).sqrt();
        coefficients[axis] = beta.iter().copied().collect();
    }
    let model = ResidualModel {
        n_actuators,
        features: features.to_vec(),
        coefficients: coefficients.clone(),
        metadata: FitMetadata {
            samples: n,
            lambda,
            source: log.vehicle.clone(),
        },
    };
    Ok((
        FitReport {
            coefficients,
            rms_before,
            rms_after,
            samples: n,
            condition_number,
            lambda,
            rank_deficient,
        },
        model,
    ))
}
