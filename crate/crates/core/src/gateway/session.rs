//! Per-connection protocol state, independent of the transport.

use serde_json::{json, Value};

use super::hub::Hub;
use super::protocol::{Channel, ErrorCode, Frame, FrameError, FrameType, TopicPattern};
use crate::kernel::{Command, InjectedState};

pub struct Session {
    authenticated: bool,
    subscriptions: Vec<TopicPattern>,
    next_seq: u64,
}

impl Session {
    pub fn new(hub: &Hub) -> Self {
        Self {
            authenticated: !hub.auth_required(),
            subscriptions: Vec::new(),
            next_seq: 1,
        }
    }

    pub fn is_authenticated(&self) -> bool {
        self.authenticated
    }

    fn stamp(&mut self, mut frame: Frame) -> Frame {
        frame.seq = self.next_seq;
        self.next_seq += 1;
        frame
    }

    /// Handles one client message and returns the frames to send back.
    pub fn handle(&mut self, text: &str, hub: &Hub) -> Vec<Frame> {
        let raw: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![self.error(hub, "", None, FrameError::new(ErrorCode::Parse, e.to_string()))],
        };
        let client_seq = raw.get("seq").and_then(Value::as_u64);
        let topic = raw.get("topic").and_then(Value::as_str).unwrap_or("").to_string();
        let frame: Frame = match serde_json::from_value(raw) {
            Ok(f) => f,
            Err(e) => return vec![self.error(hub, &topic, client_seq, FrameError::new(ErrorCode::Parse, e.to_string()))],
        };
        match self.dispatch(frame, hub) {
            Ok(out) => out.into_iter().map(|f| self.stamp(f)).collect(),
            Err(e) => vec![self.error(hub, &topic, client_seq, e)],
        }
    }

    /// Filters a published frame through this connection's subscriptions.
    pub fn deliver(&mut self, frame: &Frame) -> Option<Frame> {
        if self.subscriptions.iter().any(|p| p.matches(&frame.topic)) {
            Some(self.stamp(frame.clone()))
        } else {
            None
        }
    }

    /// Error frame for a message that never made it to parsing.
    pub fn reject(&mut self, hub: &Hub, e: FrameError) -> Frame {
        self.error(hub, "", None, e)
    }

    fn error(&mut self, hub: &Hub, topic: &str, client_seq: Option<u64>, e: FrameError) -> Frame {
        let frame = Frame::new(
            FrameType::Error,
            topic,
            json!({"code": e.code, "message": e.message, "seq": client_seq}),
            hub.now(),
        );
        self.stamp(frame)
    }

    fn dispatch(&mut self, frame: Frame, hub: &Hub) -> Result<Vec<Frame>, FrameError> {
        let now = hub.now();
        let ack = |kind: FrameType, extra: Value| {
            let mut payload = json!({"seq": frame.seq});
            if let (Value::Object(p), Value::Object(e)) = (&mut payload, extra) {
                p.extend(e);
            }
            Frame::new(kind, frame.topic.clone(), payload, now)
        };
        match frame.kind {
            FrameType::Hello => {
                let token = frame.payload.get("token").and_then(Value::as_str);
                if !hub.check_token(token) {
                    return Err(FrameError::new(ErrorCode::Auth, "invalid token"));
                }
                self.authenticated = true;
                let vehicles: Vec<Value> = hub
                    .vehicles()
                    .map(|v| json!({"id": v.id, "domain": v.spec.domain, "external": v.external, "link": v.link}))
                    .collect();
                Ok(vec![ack(FrameType::Hello, json!({"vehicles": vehicles}))])
            }
            FrameType::InjectState => {
                // Carries its own token so a vehicle bridge needs no handshake.
                let token = frame.payload.get("token").and_then(Value::as_str);
                if hub.auth_required() && !hub.check_token(token) {
                    return Err(FrameError::new(ErrorCode::Auth, "inject_state requires a valid token"));
                }
                let vehicle = addressed_vehicle(&frame.topic, hub, &[Channel::Telemetry])?;
                let state: InjectedState = serde_json::from_value(frame.payload.clone())
                    .map_err(|e| FrameError::new(ErrorCode::InvalidCommand, format!("bad state: {e}")))?;
                hub.queue(Command::InjectState { vehicle, state })?;
                Ok(vec![ack(FrameType::InjectState, json!({"queued": true}))])
            }
            _ if !self.authenticated => Err(FrameError::new(ErrorCode::Auth, "send hello with a valid token first")),
            FrameType::Subscribe => {
                let pattern = TopicPattern::parse(&frame.topic)
                    .ok_or_else(|| FrameError::new(ErrorCode::UnknownTopic, format!("unknown topic '{}'", frame.topic)))?;
                if let Some(v) = &pattern.vehicle {
                    if hub.vehicle(v).is_none() {
                        return Err(FrameError::new(ErrorCode::UnknownTopic, format!("unknown vehicle '{v}'")));
                    }
                }
                let replay = hub.latest(&pattern);
                if !self.subscriptions.contains(&pattern) {
                    self.subscriptions.push(pattern);
                }
                let mut out = vec![ack(FrameType::Subscribe, json!({"subscribed": frame.topic}))];
                out.extend(replay);
                Ok(out)
            }
            FrameType::Command => {
                let vehicle = addressed_vehicle(&frame.topic, hub, &[Channel::Command])?;
                let Value::Object(mut body) = frame.payload.clone() else {
                    return Err(FrameError::new(ErrorCode::InvalidCommand, "payload must be an object with an 'op'"));
                };
                body.insert("vehicle".into(), Value::String(vehicle));
                let command: Command = serde_json::from_value(Value::Object(body))
                    .map_err(|e| FrameError::new(ErrorCode::InvalidCommand, e.to_string()))?;
                if matches!(command, Command::InjectState { .. }) {
                    return Err(FrameError::new(ErrorCode::InvalidCommand, "use an inject_state frame"));
                }
                let op = command.op();
                hub.queue(command)?;
                Ok(vec![ack(FrameType::Command, json!({"queued": true, "op": op}))])
            }
            FrameType::Ghost => {
                let pattern = TopicPattern::parse(&frame.topic);
                let vehicle = pattern.and_then(|p| p.vehicle).unwrap_or_default();
                let t = frame.payload.get("t").and_then(Value::as_f64);
                Ok(vec![hub.ghost(&vehicle, t)?])
            }
            FrameType::Telemetry | FrameType::MissionStatus | FrameType::Error => Err(FrameError::new(
                ErrorCode::InvalidCommand,
                "frame type is only sent by the gateway",
            )),
        }
    }
}

/// Vehicle named by `agents/<id>[/<channel>]`, where the channel must be one
/// of `allowed`.
fn addressed_vehicle(topic: &str, hub: &Hub, allowed: &[Channel]) -> Result<String, FrameError> {
    let unknown = || FrameError::new(ErrorCode::UnknownTopic, format!("unknown topic '{topic}'"));
    let pattern = TopicPattern::parse(topic).ok_or_else(unknown)?;
    let vehicle = pattern.vehicle.ok_or_else(unknown)?;
    if pattern.channel.is_some_and(|c| !allowed.contains(&c)) {
        return Err(unknown());
    }
    if hub.vehicle(&vehicle).is_none() {
        return Err(FrameError::new(ErrorCode::UnknownTopic, format!("unknown vehicle '{vehicle}'")));
    }
    Ok(vehicle)
}
