//! Trainer wire protocol: 4-byte big-endian length, then a UTF-8 JSON object.
//!
//! Requests carry an `op` of `spec`, `reset`, `step` or `close`. Replies
//! always carry `ok`; failures list `errors` of `{env, code, message}` and
//! leave every environment as it was.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::env::{BatchErrors, EpisodeConfig, StepInfo, VecEnv};

/// Largest accepted frame.
pub const MAX_FRAME: usize = 64 << 20;

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `None` on a clean end of stream. Oversized frames are
/// drained and reported as `InvalidData` so the stream stays aligned.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        io::copy(&mut r.take(len as u64), &mut io::sink())?;
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    Spec,
    Reset {
        #[serde(default)]
        seeds: Option<Vec<u64>>,
        /// Env `i` gets `seed + i` when `seeds` is absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    Step {
        actions: Vec<Vec<f64>>,
    },
    Close,
}

fn failure(errors: &BatchErrors) -> Value {
    let list: Vec<Value> = errors
        .iter()
        .map(|(i, e)| json!({"env": i, "code": e.code(), "message": e.to_string()}))
        .collect();
    json!({"ok": false, "errors": list})
}

fn protocol_error(code: &str, message: impl Into<String>) -> Value {
    json!({"ok": false, "errors": [{"env": null, "code": code, "message": message.into()}]})
}

/// Synchronous request handler over a batch of environments.
pub struct TrainerService {
    config: Arc<EpisodeConfig>,
    envs: VecEnv,
}

impl TrainerService {
    pub fn new(config: Arc<EpisodeConfig>, n: usize) -> Self {
        Self {
            envs: VecEnv::new(config.clone(), n.max(1)),
            config,
        }
    }

    pub fn envs(&self) -> &VecEnv {
        &self.envs
    }

    /// Handles one request body; the flag is set when the client asked to close.
    pub fn handle(&mut self, body: &[u8]) -> (Value, bool) {
        let request: Request = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return (protocol_error("parse", e.to_string()), false),
        };
        match request {
            Request::Spec => {
                let c = &self.config;
                let reply = json!({
                    "ok": true,
                    "n_envs": self.envs.len(),
                    "observations": c.observation_names(),
                    "actions": c.action_spec(),
                    "decision_interval": c.decision_interval,
                    "dt": c.scenario.dt,
                    "max_steps": c.max_steps,
                    "reward": c.reward,
                });
                (reply, false)
            }
            Request::Reset { seeds, seed } => {
                let seeds = seeds.unwrap_or_else(|| {
                    let base = seed.unwrap_or(0);
                    (0..self.envs.len() as u64).map(|i| base.wrapping_add(i)).collect()
                });
                match self.envs.reset(&seeds) {
                    Ok(obs) => (json!({"ok": true, "obs": obs}), false),
                    Err(e) => (failure(&e), false),
                }
            }
            Request::Step { actions } => match self.envs.step(&actions) {
                Ok(ts) => {
                    let obs: Vec<&Vec<f64>> = ts.iter().map(|t| &t.obs).collect();
                    let reward: Vec<f64> = ts.iter().map(|t| t.reward).collect();
                    let done: Vec<bool> = ts.iter().map(|t| t.done).collect();
                    let info: Vec<&StepInfo> = ts.iter().map(|t| &t.info).collect();
                    (json!({"ok": true, "obs": obs, "reward": reward, "done": done, "info": info}), false)
                }
                Err(e) => (failure(&e), false),
            },
            Request::Close => (json!({"ok": true}), true),
        }
    }

    /// Serves one client until it closes or disconnects.
    pub fn serve_connection(&mut self, stream: &mut TcpStream) -> io::Result<()> {
        loop {
            let body = match read_frame(stream) {
                Ok(Some(b)) => b,
                Ok(None) => return Ok(()),
                Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                    let reply = protocol_error("frame_too_large", e.to_string());
                    write_frame(stream, reply.to_string().as_bytes())?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (reply, close) = self.handle(&body);
            write_frame(stream, reply.to_string().as_bytes())?;
            if close {
                return Ok(());
            }
        }
    }
}

/// Accepts trainers one at a time.
pub struct TrainerServer {
    listener: TcpListener,
    service: TrainerService,
}

impl TrainerServer {
    pub fn bind(addr: impl ToSocketAddrs, config: Arc<EpisodeConfig>, n: usize) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            service: TrainerService::new(config, n),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serves until `stop` is set (checked between connections and every
    /// 100 ms while idle).
    pub fn serve(mut self, stop: Arc<AtomicBool>) -> io::Result<()> {
        self.listener.set_nonblocking(true)?;
        while !stop.load(Ordering::Relaxed) {
            match self.listener.accept() {
                Ok((mut stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    log::info!("trainer connected from {peer}");
                    if let Err(e) = self.service.serve_connection(&mut stream) {
                        log::warn!("trainer connection ended: {e}");
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(100)),
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("bad reply: {0}")]
    Reply(String),
    #[error("server error: {0:?}")]
    Remote(Vec<RemoteError>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RemoteError {
    pub env: Option<usize>,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SpecReply {
    pub n_envs: usize,
    pub observations: Vec<String>,
    pub actions: Vec<RemoteAction>,
    pub decision_interval: u64,
    pub dt: f64,
    pub max_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct RemoteAction {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StepReply {
    pub obs: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub info: Vec<StepInfo>,
}

/// Blocking client for the trainer protocol.
pub struct TrainerClient {
    stream: TcpStream,
}

impl TrainerClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    /// Sends a raw request body and returns the raw reply.
    pub fn request_raw(&mut self, body: &[u8]) -> Result<Value, ClientError> {
        write_frame(&mut self.stream, body)?;
        let reply = read_frame(&mut self.stream)?.ok_or_else(|| ClientError::Reply("connection closed".into()))?;
        serde_json::from_slice(&reply).map_err(|e| ClientError::Reply(e.to_string()))
    }

    fn request<T: for<'de> Deserialize<'de>>(&mut self, body: Value) -> Result<T, ClientError> {
        let reply = self.request_raw(body.to_string().as_bytes())?;
        if reply["ok"] != Value::Bool(true) {
            let errors = serde_json::from_value(reply["errors"].clone()).map_err(|e| ClientError::Reply(e.to_string()))?;
            return Err(ClientError::Remote(errors));
        }
        serde_json::from_value(reply).map_err(|e| ClientError::Reply(e.to_string()))
    }

    pub fn spec(&mut self) -> Result<SpecReply, ClientError> {
        self.request(json!({"op": "spec"}))
    }

    pub fn reset(&mut self, seeds: &[u64]) -> Result<Vec<Vec<f64>>, ClientError> {
        #[derive(Deserialize)]
        struct R {
            obs: Vec<Vec<f64>>,
        }
        let r: R = self.request(json!({"op": "reset", "seeds": seeds}))?;
        Ok(r.obs)
    }

    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepReply, ClientError> {
        self.request(json!({"op": "step", "actions": actions}))
    }

    pub fn close(mut self) -> Result<(), ClientError> {
        let _: Value = self.request(json!({"op": "close"}))?;
        Ok(())
    }
}
