use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use marsim::gateway::*;
use marsim::kernel::*;
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio_tungstenite::tungstenite::Message;

const SCENARIO: &str = r#"{
  "origin": {"lat": 58.0, "lon": 11.0}, "duration": 40, "time_scale": 25,
  "c2": {"token": "secret", "ghost_rate": 1},
  "vehicles": [
    {"id": "auv", "spec": {"id": "k", "domain": "underwater", "acoustic": true},
     "initial": {"position": {"north": 0, "east": 0, "depth": 5}},
     "link": {"mode": "acoustic", "period": 2, "budget": 32},
     "mission": {"id": "leg", "tasks": [{"type": "goto", "target": {"north": 1000, "east": 0, "depth": 5}, "speed": 1.0}]}},
    {"id": "real", "spec": {"id": "r", "domain": "underwater"}, "external": true,
     "link": {"mode": "direct", "rate": 10}}
  ]}"#;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

struct Client {
    ws: Ws,
    seq: u64,
}

impl Client {
    async fn connect(addr: std::net::SocketAddr) -> Self {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
        Self { ws, seq: 0 }
    }

    async fn raw(&mut self, text: &str) {
        self.ws.send(Message::text(text)).await.unwrap();
    }

    async fn send(&mut self, mut frame: Value) {
        self.seq += 1;
        frame["seq"] = json!(self.seq);
        self.raw(&frame.to_string()).await;
    }

    async fn next(&mut self) -> Frame {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(10), self.ws.next())
                .await
                .expect("frame within 10 s")
                .expect("stream open")
                .unwrap();
            if let Message::Text(t) = msg {
                return serde_json::from_str(&t).unwrap();
            }
        }
    }

    /// Next frame that is not a broadcast.
    async fn reply(&mut self) -> Frame {
        loop {
            let f = self.next().await;
            if !matches!(f.kind, FrameType::Telemetry | FrameType::Ghost | FrameType::MissionStatus) {
                return f;
            }
        }
    }
}

async fn healthz(addr: std::net::SocketAddr) -> Value {
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    s.write_all(b"GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let body = buf.split("\r\n\r\n").nth(1).unwrap();
    serde_json::from_str(body).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_operator_session() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("serve.jsonl");
    let cfg = parse_scenario(SCENARIO, Path::new(".")).unwrap();
    let dt = cfg.dt;
    let server = Server::bind(
        cfg,
        ServeOptions { bind: "127.0.0.1:0".into(), token: None, pacing: None, log: Some(log.clone()) },
    )
    .await
    .unwrap();
    let addr = server.local_addr();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let serving = tokio::spawn(server.run(async {
        let _ = stop_rx.await;
    }));

    let mut a = Client::connect(addr).await;
    let mut b = Client::connect(addr).await;
    a.raw("garbage").await;
    assert_eq!(a.reply().await.payload["code"], "parse");
    a.send(json!({"type": "hello", "payload": {"token": "nope"}})).await;
    assert_eq!(a.reply().await.payload["code"], "auth");
    for c in [&mut a, &mut b] {
        c.send(json!({"type": "hello", "payload": {"token": "secret"}})).await;
        assert_eq!(c.reply().await.kind, FrameType::Hello);
    }
    a.send(json!({"type": "subscribe", "topic": "agents/*"})).await;
    assert_eq!(a.reply().await.kind, FrameType::Subscribe);
    b.send(json!({"type": "subscribe", "topic": "agents/auv/telemetry"})).await;
    assert_eq!(b.reply().await.kind, FrameType::Subscribe);

    let injected = json!({"position": [42.0, -7.0, 3.0], "orientation": [1.0, 0.0, 0.0, 0.0]});
    a.send(json!({"type": "inject_state", "topic": "agents/real/telemetry", "payload": {"token": "secret", "pose": injected}})).await;
    let ack = a.reply().await;
    assert_eq!(ack.kind, FrameType::InjectState, "{ack:?}");
    let queued_at = ack.t;

    let mut acoustic_a = Vec::new();
    let mut injected_seen = None;
    let mut ghosts = 0;
    let mut last_seq = ack.seq;
    let mut malformed_sent = false;
    while acoustic_a.len() < 6 {
        let f = a.next().await;
        assert!(f.seq > last_seq);
        last_seq = f.seq;
        match (f.kind, f.topic.as_str()) {
            (FrameType::Telemetry, "agents/auv/telemetry") => {
                assert_eq!(f.payload["predicted"], false);
                assert!(f.payload["bytes"].as_u64().unwrap() <= 32);
                acoustic_a.push(f);
                if !malformed_sent {
                    a.raw(r#"{"type": "command", "topic": "agents/auv/command", "payload": 5, "seq": 99}"#).await;
                    malformed_sent = true;
                }
            }
            (FrameType::Telemetry, "agents/real/telemetry") => {
                let sample = f.payload["sample_time"].as_f64().unwrap();
                if sample >= queued_at + 2.0 * dt - 1e-9 {
                    assert_eq!(f.payload["pose"], injected, "state at {sample}");
                    injected_seen.get_or_insert(sample);
                }
            }
            (FrameType::Ghost, _) => {
                assert_eq!(f.payload["predicted"], true);
                ghosts += 1;
            }
            (FrameType::Error, _) => {
                assert_eq!(f.payload["code"], "invalid_command");
                assert_eq!(f.payload["seq"], 99);
            }
            _ => {}
        }
    }
    assert!(injected_seen.is_some());
    assert!(ghosts > 0);
    let times: Vec<f64> = acoustic_a.iter().map(|f| f.payload["sample_time"].as_f64().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[1] - w[0] >= 2.0 - 1e-9), "{times:?}");

    let mut acoustic_b = Vec::new();
    while acoustic_b.len() < acoustic_a.len() {
        let f = b.next().await;
        assert_eq!(f.kind, FrameType::Telemetry);
        acoustic_b.push(f);
    }
    let strip = |f: &Frame| Frame { seq: 0, ..f.clone() };
    assert_eq!(acoustic_a.iter().map(strip).collect::<Vec<_>>(), acoustic_b.iter().map(strip).collect::<Vec<_>>());

    a.send(json!({"type": "command", "topic": "agents/auv/command", "payload": {"op": "abort"}})).await;
    assert_eq!(a.reply().await.payload["queued"], true);

    let health = healthz(addr).await;
    assert_eq!(health["vehicles"], 2);
    assert!(health["ticks"].as_u64().unwrap() > 0);
    assert_eq!(health["connections"], 2);

    stop_tx.send(()).unwrap();
    let outcome = serving.await.unwrap().unwrap();
    assert!(outcome.stats.ticks > 0);
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(outcome.log_hash.as_deref(), Some(log_hash(&text).as_str()));
    assert!(text.contains("state_injected"));
}

#[tokio::test]
async fn occupied_port_is_bind_error() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let cfg = parse_scenario(SCENARIO, Path::new(".")).unwrap();
    let r = Server::bind(cfg, ServeOptions { bind: addr, token: None, pacing: None, log: None }).await;
    assert!(matches!(r, Err(GatewayError::Bind { .. })));
}
