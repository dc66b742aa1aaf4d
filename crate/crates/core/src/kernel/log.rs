//! JSONL event log: one header line, then tick records.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DeliveryRecord, Event, ScenarioConfig};
use crate::dynamics::RigidBodyState;
use crate::geomath::{BodyVelocity, Pose};
use crate::guidance::MissionStatus;
use crate::vehicles::SensorReading;

pub const EVENTLOG_SCHEMA: &str = "marsim.eventlog";
pub const EVENTLOG_VERSION: u32 = 1;

/// Header fields that differ between otherwise identical runs.
const VOLATILE_HEADER_FIELDS: &[&str] = &["created_unix_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    #[serde(rename = "type")]
    pub kind: String,
    pub schema: String,
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub decimation: u64,
    pub vehicles: Vec<String>,
    pub created_unix_ms: u64,
}

impl LogHeader {
    pub fn for_config(config: &ScenarioConfig) -> Self {
        let created_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            kind: "header".into(),
            schema: EVENTLOG_SCHEMA.into(),
            version: EVENTLOG_VERSION,
            scenario: config.name.clone(),
            seed: config.seed,
            dt: config.dt,
            decimation: config.log_decimation,
            vehicles: config.vehicles.iter().map(|v| v.id.clone()).collect(),
            created_unix_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: String,
    pub pose: Pose,
    pub nu: BodyVelocity,
    pub actuators: Vec<f64>,
    /// Setpoints that produced this state.
    pub commands: Vec<f64>,
    pub mission: Option<MissionStatus>,
    pub grounded: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub readings: Vec<SensorReading>,
}

impl VehicleRecord {
    pub fn state(&self) -> RigidBodyState {
        RigidBodyState {
            pose: self.pose,
            nu: self.nu,
            actuators: self.actuators.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub tick: u64,
    pub t: f64,
    pub vehicles: Vec<VehicleRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deliveries: Vec<DeliveryRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

/// Streams records to `W` and keeps a running hash of the normalized content.
pub struct EventLogWriter<W: Write> {
    out: W,
    hasher: Sha256,
    records: u64,
}

impl<W: Write> EventLogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> std::io::Result<Self> {
        let line = serde_json::to_string(header).expect("header serializes");
        writeln!(out, "{line}")?;
        let mut hasher = Sha256::new();
        hasher.update(normalize_line(&line).as_bytes());
        hasher.update(b"\n");
        Ok(Self {
            out,
            hasher,
            records: 0,
        })
    }

    pub fn write(&mut self, record: &TickRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.records += 1;
        writeln!(self.out, "{line}")
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Flushes and returns the content hash.
    pub fn finish(mut self) -> std::io::Result<String> {
        self.out.flush()?;
        Ok(hex::encode(self.hasher.finalize()))
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

fn normalize_line(line: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(serde_json::Value::Object(mut map)) if map.get("type").and_then(|t| t.as_str()) == Some("header") => {
            for f in VOLATILE_HEADER_FIELDS {
                map.remove(*f);
            }
            serde_json::to_string(&map).expect("header serializes")
        }
        _ => line.to_string(),
    }
}

/// Log text with run-specific header fields removed.
pub fn normalize_log(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        out.push_str(&normalize_line(line));
        out.push('\n');
    }
    out
}

/// SHA-256 of the normalized log; equals the hash reported by the writer.
pub fn log_hash(text: &str) -> String {
    hex::encode(Sha256::digest(normalize_log(text).as_bytes()))
}
