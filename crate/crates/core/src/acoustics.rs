//! Underwater acoustic message channel.
//!
//! Each source has one half-duplex modem: transmissions queue behind each
//! other and take `size * 8 / bitrate` seconds on air, then propagate at the
//! speed of sound. Loss grows with range as `(d / max_range)^k`, and every
//! transmission costs `size * energy_per_byte` joules at the source.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomath::Vec3;
use crate::rng::{keyed_rng, purpose, stable_hash};

#[derive(Debug, Error, PartialEq)]
pub enum AcousticError {
    #[error("poll at t={requested} precedes previous poll at t={previous}")]
    ClockRegression { requested: f64, previous: f64 },
    #[error("invalid channel parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    #[serde(default = "ChannelParams::default_c")]
    pub sound_speed: f64,
    #[serde(default = "ChannelParams::default_range")]
    pub max_range: f64,
    #[serde(default = "ChannelParams::default_bitrate")]
    pub bitrate: f64,
    #[serde(default = "ChannelParams::default_k")]
    pub loss_exponent: f64,
    #[serde(default = "ChannelParams::default_energy")]
    pub energy_per_byte: f64,
}

impl ChannelParams {
    fn default_c() -> f64 {
        1500.0
    }
    fn default_range() -> f64 {
        3000.0
    }
    fn default_bitrate() -> f64 {
        1000.0
    }
    fn default_k() -> f64 {
        2.0
    }
    fn default_energy() -> f64 {
        0.5
    }

    pub fn validate(&self) -> Result<(), AcousticError> {
        if !(self.sound_speed > 0.0) {
            return Err(AcousticError::InvalidParams("sound_speed must be positive"));
        }
        if !(self.bitrate > 0.0) {
            return Err(AcousticError::InvalidParams("bitrate must be positive"));
        }
        if !(self.max_range > 0.0) {
            return Err(AcousticError::InvalidParams("max_range must be positive"));
        }
        // (d / R)^0 is 1 everywhere: every message would be lost.
        if !(self.loss_exponent > 0.0) {
            return Err(AcousticError::InvalidParams("loss_exponent must be positive"));
        }
        if !(self.energy_per_byte >= 0.0) {
            return Err(AcousticError::InvalidParams("energy_per_byte must be non-negative"));
        }
        Ok(())
    }

    pub fn loss_probability(&self, distance: f64) -> f64 {
        (distance / self.max_range).clamp(0.0, 1.0).powf(self.loss_exponent)
    }

    pub fn airtime(&self, size: usize) -> f64 {
        size as f64 * 8.0 / self.bitrate
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            sound_speed: Self::default_c(),
            max_range: Self::default_range(),
            bitrate: Self::default_bitrate(),
            loss_exponent: Self::default_k(),
            energy_per_byte: Self::default_energy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destination {
    Node(String),
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticMessage {
    pub src: String,
    pub dst: Destination,
    pub payload: Vec<u8>,
    pub tx_time: f64,
    /// Per-source sequence number, assigned by the channel.
    #[serde(default)]
    pub seq: u64,
}

impl AcousticMessage {
    pub fn new(src: impl Into<String>, dst: Destination, payload: Vec<u8>, tx_time: f64) -> Self {
        Self {
            src: src.into(),
            dst,
            payload,
            tx_time,
            seq: 0,
        }
    }

    pub fn size(&self) -> usize {
        self.payload.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    OutOfRange,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingDelivery {
    pub message: AcousticMessage,
    pub receiver: String,
    pub deliver_time: f64,
    pub dropped: bool,
    pub drop_reason: Option<DropReason>,
}

/// Per-destination fate of one message whose airtime starts at `start`.
///
/// Pure: the only randomness is the loss draw keyed by
/// `(seed, src, seq, receiver)`.
pub fn transmit(
    params: &ChannelParams,
    msg: &AcousticMessage,
    src_pos: &Vec3,
    dst_positions: &[(String, Vec3)],
    start: f64,
    seed: u64,
) -> Vec<PendingDelivery> {
    let end_of_airtime = start + params.airtime(msg.size());
    let src_key = stable_hash(&msg.src);
    dst_positions
        .iter()
        .filter(|(id, _)| *id != msg.src)
        .filter(|(id, _)| match &msg.dst {
            Destination::Broadcast => true,
            Destination::Node(d) => d == id,
        })
        .map(|(id, pos)| {
            let distance = (pos - src_pos).norm();
            let deliver_time = end_of_airtime + distance / params.sound_speed;
            let drop_reason = if distance > params.max_range {
                Some(DropReason::OutOfRange)
            } else {
                let mut rng = keyed_rng(&[seed, purpose::ACOUSTIC_LOSS, src_key, msg.seq, stable_hash(id)]);
                let u: f64 = rng.gen();
                (u < params.loss_probability(distance)).then_some(DropReason::Loss)
            };
            PendingDelivery {
                message: msg.clone(),
                receiver: id.clone(),
                deliver_time,
                dropped: drop_reason.is_some(),
                drop_reason,
            }
        })
        .collect()
}

/// Mutable channel state: modem queues, in-flight messages and energy ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub params: ChannelParams,
    pub seed: u64,
    busy_until: BTreeMap<String, f64>,
    busy_total: BTreeMap<String, f64>,
    next_seq: BTreeMap<String, u64>,
    energy: BTreeMap<String, f64>,
    in_flight: Vec<PendingDelivery>,
    last_poll: Option<f64>,
}

impl ChannelState {
    pub fn new(params: ChannelParams, seed: u64) -> Self {
        Self {
            params,
            seed,
            busy_until: BTreeMap::new(),
            busy_total: BTreeMap::new(),
            next_seq: BTreeMap::new(),
            energy: BTreeMap::new(),
            in_flight: Vec::new(),
            last_poll: None,
        }
    }

    /// Queues `msg` on its source modem and returns every per-receiver outcome,
    /// dropped ones included. Delivered ones stay in flight until polled.
    pub fn transmit(
        &mut self,
        mut msg: AcousticMessage,
        src_pos: &Vec3,
        dst_positions: &[(String, Vec3)],
    ) -> Vec<PendingDelivery> {
        let seq = self.next_seq.entry(msg.src.clone()).or_insert(0);
        msg.seq = *seq;
        *seq += 1;
        let busy = self.busy_until.get(&msg.src).copied().unwrap_or(f64::NEG_INFINITY);
        let start = msg.tx_time.max(busy);
        let airtime = self.params.airtime(msg.size());
        self.busy_until.insert(msg.src.clone(), start + airtime);
        *self.busy_total.entry(msg.src.clone()).or_insert(0.0) += airtime;
        *self.energy.entry(msg.src.clone()).or_insert(0.0) += msg.size() as f64 * self.params.energy_per_byte;

        let out = transmit(&self.params, &msg, src_pos, dst_positions, start, self.seed);
        for d in out.iter().filter(|d| !d.dropped) {
            self.in_flight.push(d.clone());
        }
        out
    }

    /// Deliveries due at or before `t`, ordered by time then (src, seq).
    pub fn poll_deliveries(&mut self, t: f64) -> Result<Vec<PendingDelivery>, AcousticError> {
        if let Some(previous) = self.last_poll {
            if t < previous {
                return Err(AcousticError::ClockRegression { requested: t, previous });
            }
        }
        self.last_poll = Some(t);
        let (mut due, rest): (Vec<_>, Vec<_>) = self.in_flight.drain(..).partition(|d| d.deliver_time <= t);
        self.in_flight = rest;
        due.sort_by(|a, b| {
            a.deliver_time
                .total_cmp(&b.deliver_time)
                .then_with(|| a.message.src.cmp(&b.message.src))
                .then_with(|| a.message.seq.cmp(&b.message.seq))
                .then_with(|| a.receiver.cmp(&b.receiver))
        });
        Ok(due)
    }

    /// Joules spent transmitting, per source.
    pub fn energy_report(&self) -> BTreeMap<String, f64> {
        self.energy.clone()
    }

    pub fn energy_of(&self, id: &str) -> f64 {
        self.energy.get(id).copied().unwrap_or(0.0)
    }

    pub fn busy_time(&self, id: &str) -> f64 {
        self.busy_total.get(id).copied().unwrap_or(0.0)
    }

    pub fn modem_idle_at(&self, id: &str, t: f64) -> bool {
        self.busy_until.get(id).map(|b| *b <= t).unwrap_or(true)
    }

    pub fn in_flight(&self) -> &[PendingDelivery] {
        &self.in_flight
    }
}
