//! Telemetry link policies and the compact acoustic state report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::RigidBodyState;
use crate::geomath::{wrap_angle, Pose, Vec3};
use crate::guidance::MissionStatus;

/// Encoded size of [`CompressedState`] in bytes.
pub const COMPRESSED_STATE_SIZE: usize = 26;

const POSITION_STEP: f64 = 0.1;
const HEADING_STEP: f64 = 0.01;
const TIME_STEP: f64 = 0.1;

const TASK_NONE: u16 = u16::MAX;
const TASK_DONE: u16 = u16::MAX - 1;
const TASK_ABORTED: u16 = u16::MAX - 2;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("invalid link policy: {0}")]
    Invalid(String),
    #[error("compressed state needs {COMPRESSED_STATE_SIZE} bytes, got {0}")]
    Length(usize),
}

fn default_surface_rate() -> f64 {
    1.0
}
fn default_surface_depth() -> f64 {
    0.5
}

/// How a vehicle's state reaches the operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LinkPolicy {
    /// Full state at `rate` Hz (radio, tether, or simulated ground truth).
    Direct { rate: f64 },
    /// Compressed state at most once per `period` over the acoustic channel.
    /// Shallower than `surface_depth` the vehicle reports directly at
    /// `surface_rate` Hz instead; a zero rate disables the switch.
    Acoustic {
        period: f64,
        budget: usize,
        #[serde(default = "default_surface_rate")]
        surface_rate: f64,
        #[serde(default = "default_surface_depth")]
        surface_depth: f64,
    },
}

/// The policy in force at the vehicle's current depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActiveLink {
    Direct { rate: f64 },
    Acoustic { period: f64, budget: usize },
}

impl LinkPolicy {
    pub fn acoustic_default() -> Self {
        LinkPolicy::Acoustic {
            period: 30.0,
            budget: 32,
            surface_rate: default_surface_rate(),
            surface_depth: default_surface_depth(),
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        match *self {
            LinkPolicy::Direct { rate } if !(rate > 0.0 && rate.is_finite()) => {
                Err(LinkError::Invalid(format!("direct rate must be positive, got {rate}")))
            }
            LinkPolicy::Acoustic { period, budget, surface_rate, .. } => {
                if !(period > 0.0 && period.is_finite()) {
                    return Err(LinkError::Invalid(format!("acoustic period must be positive, got {period}")));
                }
                if budget < COMPRESSED_STATE_SIZE {
                    return Err(LinkError::Invalid(format!(
                        "payload budget {budget} B is below the {COMPRESSED_STATE_SIZE} B state report"
                    )));
                }
                if !(surface_rate >= 0.0 && surface_rate.is_finite()) {
                    return Err(LinkError::Invalid("surface_rate must be non-negative".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn active(&self, depth: f64) -> ActiveLink {
        match *self {
            LinkPolicy::Direct { rate } => ActiveLink::Direct { rate },
            LinkPolicy::Acoustic {
                period,
                budget,
                surface_rate,
                surface_depth,
            } => {
                if surface_rate > 0.0 && depth < surface_depth {
                    ActiveLink::Direct { rate: surface_rate }
                } else {
                    ActiveLink::Acoustic { period, budget }
                }
            }
        }
    }
}

/// Quantized state report: position and depth in decimeters, heading in
/// centiradians, modem energy in joules, task index, time in deciseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressedState {
    pub position_dm: [i32; 3],
    pub heading_crad: i16,
    pub depth_dm: i32,
    pub energy_j: u16,
    pub task: u16,
    pub t_ds: u32,
}

fn q_i32(x: f64, step: f64) -> i32 {
    (x / step).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

impl CompressedState {
    pub fn from_state(state: &RigidBodyState, status: Option<MissionStatus>, energy: f64, t: f64) -> Self {
        let p = state.pose.position;
        let task = match status {
            Some(MissionStatus::Running(i)) => (i as u64).min(TASK_ABORTED as u64 - 1) as u16,
            Some(MissionStatus::Done) => TASK_DONE,
            Some(MissionStatus::Aborted) => TASK_ABORTED,
            Some(MissionStatus::Pending) | None => TASK_NONE,
        };
        Self {
            position_dm: [q_i32(p.x, POSITION_STEP), q_i32(p.y, POSITION_STEP), q_i32(p.z, POSITION_STEP)],
            heading_crad: (wrap_angle(state.pose.heading()) / HEADING_STEP).round() as i16,
            depth_dm: q_i32(p.z.max(0.0), POSITION_STEP),
            energy_j: energy.round().clamp(0.0, u16::MAX as f64) as u16,
            task,
            t_ds: (t / TIME_STEP).round().clamp(0.0, u32::MAX as f64) as u32,
        }
    }

    pub fn encode(&self) -> [u8; COMPRESSED_STATE_SIZE] {
        let mut out = [0u8; COMPRESSED_STATE_SIZE];
        let mut at = 0;
        let mut put = |bytes: &[u8]| {
            out[at..at + bytes.len()].copy_from_slice(bytes);
            at += bytes.len();
        };
        for v in self.position_dm {
            put(&v.to_le_bytes());
        }
        put(&self.heading_crad.to_le_bytes());
        put(&self.depth_dm.to_le_bytes());
        put(&self.energy_j.to_le_bytes());
        put(&self.task.to_le_bytes());
        put(&self.t_ds.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LinkError> {
        if bytes.len() != COMPRESSED_STATE_SIZE {
            return Err(LinkError::Length(bytes.len()));
        }
        let i32_at = |i: usize| i32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
        Ok(Self {
            position_dm: [i32_at(0), i32_at(4), i32_at(8)],
            heading_crad: i16::from_le_bytes(bytes[12..14].try_into().unwrap()),
            depth_dm: i32_at(14),
            energy_j: u16_at(18),
            task: u16_at(20),
            t_ds: u32::from_le_bytes(bytes[22..26].try_into().unwrap()),
        })
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(
            self.position_dm[0] as f64 * POSITION_STEP,
            self.position_dm[1] as f64 * POSITION_STEP,
            self.position_dm[2] as f64 * POSITION_STEP,
        )
    }

    pub fn heading(&self) -> f64 {
        self.heading_crad as f64 * HEADING_STEP
    }

    pub fn depth(&self) -> f64 {
        self.depth_dm as f64 * POSITION_STEP
    }

    pub fn time(&self) -> f64 {
        self.t_ds as f64 * TIME_STEP
    }

    pub fn status(&self) -> Option<MissionStatus> {
        match self.task {
            TASK_NONE => None,
            TASK_DONE => Some(MissionStatus::Done),
            TASK_ABORTED => Some(MissionStatus::Aborted),
            i => Some(MissionStatus::Running(i as usize)),
        }
    }

    /// Level pose at the reported position and heading, at rest.
    pub fn to_state(&self) -> RigidBodyState {
        RigidBodyState::at_rest(Pose::from_euler(self.position(), 0.0, 0.0, self.heading()), 0)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let p = self.position();
        serde_json::json!({
            "north": p.x, "east": p.y, "down": p.z,
            "heading": self.heading(),
            "depth": self.depth(),
            "energy": self.energy_j,
            "status": self.status(),
            "t": self.time(),
        })
    }
}
