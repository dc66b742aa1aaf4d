//! Wire frames and topic addressing.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    Hello,
    Subscribe,
    Command,
    Telemetry,
    Ghost,
    MissionStatus,
    Error,
    InjectState,
}

/// One JSON object per WebSocket message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "type")]
    pub kind: FrameType,
    #[serde(default)]
    pub topic: String,
    #[serde(default)]
    pub payload: Value,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub t: f64,
}

impl Frame {
    pub fn new(kind: FrameType, topic: impl Into<String>, payload: Value, t: f64) -> Self {
        Self {
            kind,
            topic: topic.into(),
            payload,
            seq: 0,
            t,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Parse,
    UnknownTopic,
    Auth,
    NotExternallyDriven,
    InvalidCommand,
    NoTelemetryYet,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("code serializes");
        f.write_str(s.as_str().unwrap_or("error"))
    }
}

/// A rejected frame; turned into an error frame echoing the client's seq.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameError {
    pub code: ErrorCode,
    pub message: String,
}

impl FrameError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Telemetry,
    Ghost,
    Command,
    Mission,
}

impl Channel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Telemetry => "telemetry",
            Channel::Ghost => "ghost",
            Channel::Command => "command",
            Channel::Mission => "mission",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "telemetry" => Some(Channel::Telemetry),
            "ghost" => Some(Channel::Ghost),
            "command" => Some(Channel::Command),
            "mission" => Some(Channel::Mission),
            _ => None,
        }
    }
}

pub fn topic(vehicle: &str, channel: Channel) -> String {
    format!("agents/{vehicle}/{}", channel.as_str())
}

/// `agents/<id|*>[/<channel|*>]`; `None` fields are wildcards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPattern {
    pub vehicle: Option<String>,
    pub channel: Option<Channel>,
}

impl TopicPattern {
    pub fn parse(s: &str) -> Option<Self> {
        let mut parts = s.split('/');
        if parts.next() != Some("agents") {
            return None;
        }
        let vehicle = match parts.next() {
            Some("*") => None,
            Some(id) if !id.is_empty() => Some(id.to_string()),
            _ => return None,
        };
        let channel = match parts.next() {
            None | Some("*") => None,
            Some(c) => Some(Channel::parse(c)?),
        };
        if parts.next().is_some() {
            return None;
        }
        Some(Self { vehicle, channel })
    }

    pub fn matches(&self, topic: &str) -> bool {
        let Some(TopicPattern { vehicle, channel }) = TopicPattern::parse(topic) else {
            return false;
        };
        let (Some(v), Some(c)) = (vehicle, channel) else {
            return false;
        };
        self.vehicle.as_ref().is_none_or(|mine| *mine == v) && self.channel.is_none_or(|mine| mine == c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns() {
        let p = TopicPattern::parse("agents/auv1/telemetry").unwrap();
        assert!(p.matches("agents/auv1/telemetry"));
        assert!(!p.matches("agents/auv1/ghost"));
        assert!(!p.matches("agents/auv2/telemetry"));
        let all = TopicPattern::parse("agents/*").unwrap();
        assert!(all.matches("agents/x/mission"));
        let ghosts = TopicPattern::parse("agents/*/ghost").unwrap();
        assert!(ghosts.matches("agents/y/ghost") && !ghosts.matches("agents/y/telemetry"));
        assert!(TopicPattern::parse("agents/a/b/c").is_none());
        assert!(TopicPattern::parse("vehicles/a").is_none());
        assert!(TopicPattern::parse("agents/a/sonar").is_none());
    }

    #[test]
    fn frame_defaults() {
        let f: Frame = serde_json::from_str(r#"{"type": "hello"}"#).unwrap();
        assert_eq!(f.kind, FrameType::Hello);
        assert_eq!(f.seq, 0);
        assert!(serde_json::from_str::<Frame>(r#"{"type": "shout"}"#).is_err());
        assert_eq!(ErrorCode::NotExternallyDriven.to_string(), "not_externally_driven");
    }
}
