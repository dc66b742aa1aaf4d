//! Episodes over the kernel: reset/step with actuator-level actions.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomath::{wrap_angle, Pose, Vec3};
use crate::guidance::Target;
use crate::kernel::{load_scenario, parse_scenario, Command, KernelError, ScenarioConfig, World};
use crate::rng::{keyed_rng, purpose, stable_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Decrease in distance to the goal since the previous step.
    WaypointProgress,
    /// Negative absolute depth error against the goal depth.
    DepthKeeping,
}

/// Uniform half-widths applied to the controlled vehicle's initial pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomization {
    #[serde(default)]
    pub north: f64,
    #[serde(default)]
    pub east: f64,
    #[serde(default)]
    pub depth: f64,
    #[serde(default)]
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionSpec {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub scenario: Arc<ScenarioConfig>,
    pub vehicle: String,
    pub decision_interval: u64,
    pub max_steps: u64,
    pub reward: RewardKind,
    pub goal: Vec3,
    pub goal_radius: f64,
    pub randomize: Randomization,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScenarioRef {
    Path(String),
    Inline(serde_json::Value),
}

fn default_interval() -> u64 {
    10
}
fn default_max_steps() -> u64 {
    500
}
fn default_radius() -> f64 {
    3.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeDoc {
    scenario: ScenarioRef,
    vehicle: String,
    #[serde(default = "default_interval")]
    decision_interval: u64,
    #[serde(default = "default_max_steps")]
    max_steps: u64,
    reward: RewardKind,
    goal: Target,
    #[serde(default = "default_radius")]
    goal_radius: f64,
    #[serde(default)]
    randomize: Randomization,
}

fn schema(path: &str, message: impl Into<String>) -> KernelError {
    KernelError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

pub fn load_episode(path: &Path) -> Result<EpisodeConfig, KernelError> {
    let text = std::fs::read_to_string(path).map_err(|_| KernelError::MissingAsset {
        path: path.display().to_string(),
    })?;
    parse_episode(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_episode(text: &str, base_dir: &Path) -> Result<EpisodeConfig, KernelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: EpisodeDoc = serde_path_to_error::deserialize(de).map_err(|e| schema(&e.path().to_string(), e.inner().to_string()))?;
    let scenario = match doc.scenario {
        ScenarioRef::Path(p) => {
            let p = PathBuf::from(p);
            load_scenario(&if p.is_absolute() { p } else { base_dir.join(p) })?
        }
        ScenarioRef::Inline(v) => parse_scenario(&v.to_string(), base_dir).map_err(|e| match e {
            KernelError::Schema { path, message } => schema(&format!("scenario.{path}"), message),
            other => other,
        })?,
    };
    let goal = doc.goal.resolve(&scenario.origin).map_err(|e| schema("goal", e.to_string()))?;
    let cfg = EpisodeConfig {
        scenario: Arc::new(scenario),
        vehicle: doc.vehicle,
        decision_interval: doc.decision_interval,
        max_steps: doc.max_steps,
        reward: doc.reward,
        goal,
        goal_radius: doc.goal_radius,
        randomize: doc.randomize,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.decision_interval < 1 {
            return Err(schema("decision_interval", "must be at least 1"));
        }
        if self.max_steps < 1 {
            return Err(schema("max_steps", "must be at least 1"));
        }
        if !(self.goal_radius > 0.0) {
            return Err(schema("goal_radius", "must be positive"));
        }
        let r = self.randomize;
        if [r.north, r.east, r.depth, r.heading].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(schema("randomize", "ranges must be finite and non-negative"));
        }
        let Some(v) = self.scenario.vehicle_index(&self.vehicle) else {
            return Err(schema("vehicle", format!("no vehicle '{}' in scenario", self.vehicle)));
        };
        let spec = &self.scenario.vehicles[v].spec;
        if !spec.uses_dynamics() {
            return Err(schema("vehicle", "controlled vehicle needs dynamic fidelity and actuators"));
        }
        if self.action_spec().iter().any(|a| !(a.low.is_finite() && a.high.is_finite() && a.low < a.high)) {
            return Err(schema("vehicle", "actuator bounds must be finite"));
        }
        Ok(())
    }

    pub fn observation_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["u", "v", "w", "p", "q", "r", "depth", "heading_error", "goal_distance"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(self.action_spec().iter().map(|a| format!("last_{}", a.name)));
        names
    }

    pub fn action_spec(&self) -> Vec<ActionSpec> {
        let v = self.scenario.vehicle_index(&self.vehicle).expect("validated vehicle");
        let spec = &self.scenario.vehicles[v].spec;
        spec.actuator_names()
            .into_iter()
            .zip(spec.actuator_limits())
            .map(|(name, (low, high))| ActionSpec { name, low, high })
            .collect()
    }
}

pub fn waypoint_progress(previous: &Vec3, current: &Vec3, goal: &Vec3) -> f64 {
    (goal - previous).norm() - (goal - current).norm()
}

pub fn depth_keeping(current: &Vec3, target_depth: f64) -> f64 {
    -(current.z - target_depth).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: u64,
    pub t: f64,
    /// Some action component was outside its bounds and was clamped.
    pub clamped: bool,
    pub success: bool,
    pub grounded: bool,
    pub truncated: bool,
    pub goal_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode finished; reset first")]
    EpisodeFinished,
    #[error("environment has not been reset")]
    NotReset,
    #[error("action has {got} components, expected {expected}")]
    ActionLength { expected: usize, got: usize },
    #[error("batch has {got} entries for {expected} environments")]
    BatchSize { expected: usize, got: usize },
    #[error("action components must be finite")]
    NonFiniteAction,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl EnvError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::EpisodeFinished => "episode_finished",
            EnvError::NotReset => "not_reset",
            EnvError::ActionLength { .. } => "action_length",
            EnvError::BatchSize { .. } => "batch_size",
            EnvError::NonFiniteAction => "invalid_action",
            EnvError::Kernel(_) => "simulation",
        }
    }
}

/// One isolated world driven by a single controlled vehicle.
pub struct Env {
    config: Arc<EpisodeConfig>,
    actions: Vec<ActionSpec>,
    vehicle: usize,
    world: Option<World>,
    steps: u64,
    done: bool,
    last_action: Vec<f64>,
}

impl Env {
    pub fn new(config: Arc<EpisodeConfig>) -> Self {
        let actions = config.action_spec();
        let vehicle = config.scenario.vehicle_index(&config.vehicle).expect("validated vehicle");
        Self {
            last_action: vec![0.0; actions.len()],
            config,
            actions,
            vehicle,
            world: None,
            steps: 0,
            done: false,
        }
    }

    pub fn config(&self) -> &Arc<EpisodeConfig> {
        &self.config
    }

    pub fn world(&self) -> Option<&World> {
        self.world.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Rebuilds the world from the template; deterministic per seed.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut scenario = (*self.config.scenario).clone();
        scenario.seed = seed;
        scenario.threads = 1;
        let r = self.config.randomize;
        let mut rng = keyed_rng(&[seed, purpose::EPISODE_INIT, stable_hash(&self.config.vehicle)]);
        let mut draw = |half: f64| if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
        let (dn, de, dd, dh) = (draw(r.north), draw(r.east), draw(r.depth), draw(r.heading));
        let initial = &mut scenario.vehicles[self.vehicle].initial;
        let p = initial.pose.position;
        let (roll, pitch, yaw) = initial.pose.euler();
        initial.pose = Pose::from_euler(
            Vec3::new(p.x + dn, p.y + de, (p.z + dd).max(0.0)),
            roll,
            pitch,
            wrap_angle(yaw + dh),
        );
        self.world = Some(World::new(Arc::new(scenario)));
        self.steps = 0;
        self.done = false;
        self.last_action = vec![0.0; self.actions.len()];
        self.observe()
    }

    /// Checks an action without touching any state.
    pub fn check(&self, action: &[f64]) -> Result<(), EnvError> {
        if self.world.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        if action.len() != self.actions.len() {
            return Err(EnvError::ActionLength {
                expected: self.actions.len(),
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        Ok(())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        self.check(action)?;
        let mut clamped = false;
        let applied: Vec<f64> = action
            .iter()
            .zip(&self.actions)
            .map(|(a, s)| {
                let c = a.clamp(s.low, s.high);
                clamped |= c != *a;
                c
            })
            .collect();
        let goal = self.config.goal;
        let world = self.world.as_mut().expect("checked");
        let before = world.vehicles()[self.vehicle].state.pose.position;
        world.submit(Command::SetActuators {
            vehicle: self.config.vehicle.clone(),
            commands: applied.clone(),
        });
        for _ in 0..self.config.decision_interval {
            if let Err(e) = world.tick() {
                self.done = true;
                return Err(e.into());
            }
        }
        self.steps += 1;
        self.last_action = applied;
        let rt = &world.vehicles()[self.vehicle];
        let after = rt.state.pose.position;
        let grounded = rt.grounded;
        let t = world.time();
        let distance = (goal - after).norm();
        let (reward, success) = match self.config.reward {
            RewardKind::WaypointProgress => (waypoint_progress(&before, &after, &goal), distance <= self.config.goal_radius),
            RewardKind::DepthKeeping => (depth_keeping(&after, goal.z), false),
        };
        let truncated = self.steps >= self.config.max_steps && !success && !grounded;
        self.done = success || grounded || self.steps >= self.config.max_steps;
        Ok(Transition {
            obs: self.observe(),
            reward,
            done: self.done,
            info: StepInfo {
                step: self.steps,
                t,
                clamped,
                success,
                grounded,
                truncated,
                goal_distance: distance,
            },
        })
    }

    fn observe(&self) -> Vec<f64> {
        let world = self.world.as_ref().expect("reset before observing");
        let state = &world.vehicles()[self.vehicle].state;
        let p = state.pose.position;
        let goal = self.config.goal;
        let bearing = (goal.y - p.y).atan2(goal.x - p.x);
        let mut obs = state.nu.to_array().to_vec();
        obs.push(p.z);
        obs.push(wrap_angle(bearing - state.pose.heading()));
        obs.push((goal - p).norm());
        for (a, s) in self.last_action.iter().zip(&self.actions) {
            obs.push(2.0 * (a - s.low) / (s.high - s.low) - 1.0);
        }
        obs
    }
}

/// Lockstep batch of independent environments.
pub struct VecEnv {
    envs: Vec<Env>,
}

/// Per-environment failures of a batched call; nothing was changed.
pub type BatchErrors = Vec<(usize, EnvError)>;

impl VecEnv {
    pub fn new(config: Arc<EpisodeConfig>, n: usize) -> Self {
        Self {
            envs: (0..n).map(|_| Env::new(config.clone())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn reset(&mut self, seeds: &[u64]) -> Result<Vec<Vec<f64>>, BatchErrors> {
        if seeds.len() != self.envs.len() {
            return Err(vec![(0, EnvError::BatchSize { expected: self.envs.len(), got: seeds.len() })]);
        }
        Ok(self
            .envs
            .par_iter_mut()
            .zip(seeds.par_iter())
            .map(|(env, seed)| env.reset(*seed))
            .collect())
    }

    /// Validates every action first, so a bad batch leaves all envs untouched.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<Vec<Transition>, BatchErrors> {
        if actions.len() != self.envs.len() {
            return Err(vec![(0, EnvError::BatchSize { expected: self.envs.len(), got: actions.len() })]);
        }
        let invalid: BatchErrors = self
            .envs
            .iter()
            .zip(actions)
            .enumerate()
            .filter_map(|(i, (env, a))| env.check(a).err().map(|e| (i, e)))
            .collect();
        if !invalid.is_empty() {
            return Err(invalid);
        }
        let results: Vec<Result<Transition, EnvError>> = self
            .envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(env, a)| env.step(a))
            .collect();
        let mut out = Vec::with_capacity(results.len());
        let mut errors = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(t) => out.push(t),
                Err(e) => errors.push((i, e)),
            }
        }
        if errors.is_empty() {
            Ok(out)
        } else {
            Err(errors)
        }
    }
}
