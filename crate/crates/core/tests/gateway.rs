use std::path::Path;
use std::sync::mpsc::Receiver;
use std::sync::Arc;

use marsim::dynamics::RigidBodyState;
use marsim::gateway::*;
use marsim::geomath::{Pose, Vec3};
use marsim::guidance::{MissionStatus, GHOST_DT};
use marsim::kernel::*;
use serde_json::{json, Value};

const SCENARIO: &str = r#"{
  "origin": {"lat": 58.0, "lon": 11.0}, "duration": 600,
  "c2": {"token": "secret", "ghost_rate": 0},
  "vehicles": [
    {"id": "auv", "spec": {"id": "k", "domain": "underwater", "acoustic": true},
     "initial": {"position": {"north": 0, "east": 0, "depth": 5}},
     "link": {"mode": "acoustic", "period": 2, "budget": 32},
     "mission": {"id": "leg", "tasks": [{"type": "goto", "target": {"north": 1000, "east": 0, "depth": 5}, "speed": 1.0}]}},
    {"id": "real", "spec": {"id": "r", "domain": "underwater"}, "external": true,
     "link": {"mode": "direct", "rate": 10}},
    {"id": "asv", "spec": {"id": "s", "domain": "surface"}, "link": {"mode": "direct", "rate": 5}}
  ]}"#;

fn config() -> ScenarioConfig {
    parse_scenario(SCENARIO, Path::new(".")).unwrap()
}

fn hub() -> (Arc<Hub>, Receiver<Command>) {
    Hub::new(&config(), config().c2.token, "max".into())
}

fn send(s: &mut Session, hub: &Hub, v: Value) -> Vec<Frame> {
    s.handle(&v.to_string(), hub)
}

fn code(f: &Frame) -> &str {
    assert_eq!(f.kind, FrameType::Error, "{f:?}");
    f.payload["code"].as_str().unwrap()
}

fn authed(hub: &Hub) -> Session {
    let mut s = Session::new(hub);
    let r = send(&mut s, hub, json!({"type": "hello", "payload": {"token": "secret"}, "seq": 1}));
    assert_eq!(r[0].kind, FrameType::Hello);
    s
}

#[test]
fn malformed_frame_keeps_session_alive() {
    let (hub, _rx) = hub();
    let mut s = Session::new(&hub);
    let r = s.handle(r#"{"type": "launch_missiles", "seq": 41}"#, &hub);
    assert_eq!(code(&r[0]), "parse");
    assert_eq!(r[0].payload["seq"], 41);
    let r = s.handle("{not json", &hub);
    assert_eq!(code(&r[0]), "parse");
    assert!(r[0].payload["seq"].is_null());
    let r = send(&mut s, &hub, json!({"type": "hello", "payload": {"token": "secret"}, "seq": 2}));
    assert_eq!(r[0].kind, FrameType::Hello);
    let ids: Vec<&str> = r[0].payload["vehicles"].as_array().unwrap().iter().map(|v| v["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["asv", "auv", "real"]);
}

#[test]
fn auth_required_before_anything_else() {
    let (hub, _rx) = hub();
    let mut s = Session::new(&hub);
    let r = send(&mut s, &hub, json!({"type": "subscribe", "topic": "agents/*"}));
    assert_eq!(code(&r[0]), "auth");
    let r = send(&mut s, &hub, json!({"type": "hello", "payload": {"token": "wrong"}}));
    assert_eq!(code(&r[0]), "auth");
    assert!(!s.is_authenticated());
    let r = send(&mut s, &hub, json!({"type": "command", "topic": "agents/auv/command", "payload": {"op": "abort"}}));
    assert_eq!(code(&r[0]), "auth");
}

#[test]
fn no_token_configured_means_open() {
    let mut cfg = config();
    cfg.c2.token = None;
    let (hub, _rx) = Hub::new(&cfg, None, "max".into());
    let mut s = Session::new(&hub);
    let r = send(&mut s, &hub, json!({"type": "subscribe", "topic": "agents/*"}));
    assert_eq!(r[0].kind, FrameType::Subscribe);
}

#[test]
fn unknown_topics_rejected() {
    let (hub, _rx) = hub();
    let mut s = authed(&hub);
    for topic in ["agents/nobody/telemetry", "agents/auv/sonar", "fleet/auv", ""] {
        let r = send(&mut s, &hub, json!({"type": "subscribe", "topic": topic}));
        assert_eq!(code(&r[0]), "unknown_topic", "{topic}");
    }
    let r = send(&mut s, &hub, json!({"type": "command", "topic": "agents/nobody/command", "payload": {"op": "abort"}}));
    assert_eq!(code(&r[0]), "unknown_topic");
}

#[test]
fn commands_validated_then_queued_in_order() {
    let (hub, rx) = hub();
    let mut s = authed(&hub);
    let r = send(&mut s, &hub, json!({"type": "command", "topic": "agents/auv/command", "payload": {"op": "self_destruct"}, "seq": 7}));
    assert_eq!(code(&r[0]), "invalid_command");
    assert_eq!(r[0].payload["seq"], 7);
    let r = send(&mut s, &hub, json!({"type": "command", "topic": "agents/asv/command", "payload": {"op": "set_actuators", "commands": [1, 2, 3, 4, 5]}}));
    assert_eq!(code(&r[0]), "invalid_command");
    let bad_mission = json!({"op": "set_mission", "mission": {"id": "m", "tasks": [{"type": "goto", "target": {"north": 1, "east": 1, "depth": 1}, "speed": -1}]}});
    let r = send(&mut s, &hub, json!({"type": "command", "topic": "agents/auv/command", "payload": bad_mission}));
    assert_eq!(code(&r[0]), "invalid_command");
    let r = send(&mut s, &hub, json!({"type": "command", "topic": "agents/auv/command", "payload": {"op": "inject_state", "state": {"pose": {"position": [0, 0, 0], "orientation": [1, 0, 0, 0]}}}}));
    assert_eq!(code(&r[0]), "invalid_command");
    assert!(rx.try_recv().is_err());

    let mission = json!({"id": "new", "tasks": [{"type": "loiter", "point": {"north": 0, "east": 0, "depth": 5}, "radius": 20, "duration": 60, "speed": 1}]});
    let r = send(&mut s, &hub, json!({"type": "command", "topic": "agents/auv/command", "payload": {"op": "set_mission", "mission": mission}, "seq": 9}));
    assert_eq!(r[0].kind, FrameType::Command);
    assert_eq!(r[0].payload["queued"], true);
    assert_eq!(r[0].payload["seq"], 9);
    send(&mut s, &hub, json!({"type": "command", "topic": "agents/auv", "payload": {"op": "abort"}}));
    assert!(matches!(rx.try_recv().unwrap(), Command::SetMission { vehicle, .. } if vehicle == "auv"));
    assert_eq!(rx.try_recv().unwrap(), Command::Abort { vehicle: "auv".into() });
}

fn inject(token: &str, vehicle: &str) -> Value {
    json!({"type": "inject_state", "topic": format!("agents/{vehicle}/telemetry"), "seq": 3,
           "payload": {"token": token, "pose": {"position": [5.0, 6.0, 7.0], "orientation": [1, 0, 0, 0]}}})
}

#[test]
fn injection_rules() {
    let (hub, rx) = hub();
    let mut s = Session::new(&hub);
    let r = send(&mut s, &hub, inject("wrong", "real"));
    assert_eq!(code(&r[0]), "auth");
    let r = send(&mut s, &hub, inject("secret", "auv"));
    assert_eq!(code(&r[0]), "not_externally_driven");
    let r = send(&mut s, &hub, inject("secret", "real"));
    assert_eq!(r[0].kind, FrameType::InjectState);
    match rx.try_recv().unwrap() {
        Command::InjectState { vehicle, state } => {
            assert_eq!(vehicle, "real");
            assert_eq!(state.pose.position, Vec3::new(5.0, 6.0, 7.0));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn ghost_needs_telemetry() {
    let (hub, _rx) = hub();
    let mut s = authed(&hub);
    for v in ["auv", "nobody"] {
        let r = send(&mut s, &hub, json!({"type": "ghost", "topic": format!("agents/{v}/ghost")}));
        assert_eq!(code(&r[0]), "no_telemetry_yet");
    }
}

fn start_at_rest() -> RigidBodyState {
    RigidBodyState::at_rest(Pose::from_euler(Vec3::new(0.0, 0.0, 5.0), 0.0, 0.0, 0.0), 0)
}

fn compressed_report(state: &RigidBodyState, t: f64, task: usize) -> TickReport {
    let c = CompressedState::from_state(state, Some(MissionStatus::Running(task)), 3.0, t);
    TickReport {
        tick: (t / 0.01).round() as u64,
        t: t + 0.2,
        telemetry: vec![TelemetryUpdate {
            vehicle: "auv".into(),
            sample_time: t,
            received_time: t + 0.2,
            payload: TelemetryPayload::Compressed(c),
        }],
        ..Default::default()
    }
}

/// Displacement of the kinematic model from rest toward speed `v` after `n`
/// steps of `h` with time constant `tau`: a geometric series.
fn lagged_distance(v: f64, tau: f64, h: f64, n: u32) -> f64 {
    let r = (-h / tau).exp();
    v * h * (n as f64 - r * (1.0 - r.powi(n as i32)) / (1.0 - r))
}

#[test]
fn ghost_snaps_to_update_then_advances_along_plan() {
    let cfg = config();
    let (hub, rx) = Hub::new(&cfg, Some("secret".into()), "max".into());
    let mut obs = GatewayObserver::new(hub.clone(), rx, &cfg);
    let world = World::new(Arc::new(cfg));
    let mut s = authed(&hub);
    send(&mut s, &hub, json!({"type": "subscribe", "topic": "agents/auv/*"}));

    let report = compressed_report(&start_at_rest(), 30.0, 0);
    obs.after_tick(&world, &report);

    let r = send(&mut s, &hub, json!({"type": "ghost", "topic": "agents/auv/ghost", "payload": {"t": 30.0}}));
    assert_eq!(r[0].payload["predicted"], true);
    assert_eq!(r[0].payload["pose"]["position"], json!([0.0, 0.0, 5.0]));

    let r = send(&mut s, &hub, json!({"type": "ghost", "topic": "agents/auv/ghost", "payload": {"t": 40.0}}));
    let north = r[0].payload["pose"]["position"][0].as_f64().unwrap();
    let expected = lagged_distance(1.0, 1.0, GHOST_DT, 100);
    assert!((north - expected).abs() < 1e-6, "{north} vs {expected}");
    assert!(r[0].payload["pose"]["position"][1].as_f64().unwrap().abs() < 1e-9);
    assert_eq!(r[0].payload["age"], 10.0);

    // Published telemetry is never predicted; status change is announced.
    let published: Vec<Frame> = hub.latest(&TopicPattern::parse("agents/auv").unwrap());
    let telemetry = published.iter().find(|f| f.kind == FrameType::Telemetry).unwrap();
    assert_eq!(telemetry.payload["predicted"], false);
    assert_eq!(telemetry.payload["bytes"], COMPRESSED_STATE_SIZE);
    let status = published.iter().find(|f| f.kind == FrameType::MissionStatus).unwrap();
    assert_eq!(status.payload["status"], json!({"state": "running", "index": 0}));

    // A fresh report replaces the prediction.
    let moved = RigidBodyState::at_rest(Pose::from_euler(Vec3::new(12.0, 1.0, 5.0), 0.0, 0.0, 0.0), 0);
    obs.after_tick(&world, &compressed_report(&moved, 42.0, 0));
    let r = send(&mut s, &hub, json!({"type": "ghost", "topic": "agents/auv/ghost", "payload": {"t": 42.0}}));
    assert_eq!(r[0].payload["pose"]["position"], json!([12.0, 1.0, 5.0]));
}

#[test]
fn sessions_see_identical_frames_with_own_sequence() {
    let cfg = config();
    let (hub, rx) = Hub::new(&cfg, Some("secret".into()), "max".into());
    let mut obs = GatewayObserver::new(hub.clone(), rx, &cfg);
    let world = World::new(Arc::new(cfg));
    let mut a = authed(&hub);
    let mut b = authed(&hub);
    let mut stray = authed(&hub);
    send(&mut a, &hub, json!({"type": "subscribe", "topic": "agents/*"}));
    send(&mut b, &hub, json!({"type": "subscribe", "topic": "agents/auv/telemetry"}));
    send(&mut stray, &hub, json!({"type": "subscribe", "topic": "agents/asv/telemetry"}));
    let mut feed = hub.subscribe_frames();
    obs.after_tick(&world, &compressed_report(&start_at_rest(), 2.0, 0));

    let mut got_a = Vec::new();
    let mut got_b = Vec::new();
    while let Ok(f) = feed.try_recv() {
        got_a.extend(a.deliver(&f));
        got_b.extend(b.deliver(&f));
        assert!(stray.deliver(&f).is_none());
    }
    let strip = |f: &Frame| Frame { seq: 0, ..f.clone() };
    let ta: Vec<Frame> = got_a.iter().filter(|f| f.kind == FrameType::Telemetry).map(strip).collect();
    let tb: Vec<Frame> = got_b.iter().map(strip).collect();
    assert_eq!(ta, tb);
    assert_eq!(got_a.len(), 2, "telemetry and mission status");
    let seqs: Vec<u64> = got_a.iter().map(|f| f.seq).collect();
    assert!(seqs[0] >= 3 && seqs.windows(2).all(|w| w[1] > w[0]), "{seqs:?}");
}

#[test]
fn late_subscriber_gets_latest_frame() {
    let cfg = config();
    let (hub, rx) = Hub::new(&cfg, Some("secret".into()), "max".into());
    let mut obs = GatewayObserver::new(hub.clone(), rx, &cfg);
    let world = World::new(Arc::new(cfg));
    obs.after_tick(&world, &compressed_report(&start_at_rest(), 2.0, 0));
    let mut s = authed(&hub);
    let r = send(&mut s, &hub, json!({"type": "subscribe", "topic": "agents/auv/telemetry"}));
    assert_eq!(r.len(), 2);
    assert_eq!(r[1].kind, FrameType::Telemetry);
    assert!(r[1].seq > r[0].seq);
}

#[test]
fn observer_feeds_commands_into_world() {
    let cfg = config();
    let (hub, rx) = Hub::new(&cfg, Some("secret".into()), "max".into());
    let mut obs = GatewayObserver::new(hub.clone(), rx, &cfg);
    let mut world = World::new(Arc::new(cfg));
    let mut s = Session::new(&hub);
    send(&mut s, &hub, inject("secret", "real"));
    obs.before_tick(&mut world);
    let report = world.tick().unwrap();
    obs.after_tick(&world, &report);
    assert_eq!(world.vehicle("real").unwrap().state.pose.position, Vec3::new(5.0, 6.0, 7.0));
    assert_eq!(hub.health()["ticks"], 1);
}
