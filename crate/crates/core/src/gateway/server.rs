//! WebSocket service: `/ws` for frames, `/healthz` for run statistics.

use std::fs::File;
use std::future::Future;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};

use super::hub::{GatewayObserver, Hub};
use super::protocol::{ErrorCode, Frame, FrameError};
use super::session::Session;
use crate::kernel::{run, EventLogWriter, KernelError, LogHeader, RunOptions, RunStats, ScenarioConfig, TimeScale, World};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("cannot create log {path}: {source}")]
    Log { path: String, source: std::io::Error },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: String,
    /// Overrides the scenario's token.
    pub token: Option<String>,
    /// Overrides the scenario's time scale.
    pub pacing: Option<TimeScale>,
    pub log: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ServeOutcome {
    pub stats: RunStats,
    pub log_hash: Option<String>,
}

/// Bound listener plus everything needed to start the kernel.
pub struct Server {
    listener: TcpListener,
    hub: Arc<Hub>,
    observer: GatewayObserver,
    config: Arc<ScenarioConfig>,
    pacing: TimeScale,
    log: Option<(PathBuf, BufWriter<File>)>,
}

impl Server {
    pub async fn bind(config: ScenarioConfig, options: ServeOptions) -> Result<Self, GatewayError> {
        let listener = TcpListener::bind(&options.bind).await.map_err(|source| GatewayError::Bind {
            addr: options.bind.clone(),
            source,
        })?;
        let log = match &options.log {
            Some(path) => {
                let f = File::create(path).map_err(|source| GatewayError::Log {
                    path: path.display().to_string(),
                    source,
                })?;
                Some((path.clone(), BufWriter::new(f)))
            }
            None => None,
        };
        let pacing = options.pacing.unwrap_or(config.time_scale);
        let token = options.token.or_else(|| config.c2.token.clone());
        let (hub, commands) = Hub::new(&config, token, pacing.to_string());
        let observer = GatewayObserver::new(hub.clone(), commands, &config);
        Ok(Self {
            listener,
            hub,
            observer,
            config: Arc::new(config),
            pacing,
            log,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn hub(&self) -> Arc<Hub> {
        self.hub.clone()
    }

    /// Runs the scenario and serves until `shutdown` resolves. The service
    /// stays up after the scenario ends so clients can read final state.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<ServeOutcome, GatewayError> {
        let Server {
            listener,
            hub,
            mut observer,
            config,
            pacing,
            log,
        } = self;
        let stop = Arc::new(AtomicBool::new(false));
        let kernel_hub = hub.clone();
        let options = RunOptions {
            pacing,
            until_tick: None,
            stop: Some(stop.clone()),
        };
        let kernel = std::thread::Builder::new()
            .name("marsim-kernel".into())
            .spawn(move || -> Result<ServeOutcome, KernelError> {
                let mut world = World::new(config.clone());
                let result = match log {
                    Some((path, out)) => {
                        let header = LogHeader::for_config(&config);
                        let mut writer = EventLogWriter::new(out, &header)?;
                        let stats = run(&mut world, &options, Some(&mut writer), &mut observer);
                        let hash = writer.finish()?;
                        log::info!("event log closed: {}", path.display());
                        stats.map(|mut s| {
                            s.log_hash = Some(hash.clone());
                            ServeOutcome { stats: s, log_hash: Some(hash) }
                        })
                    }
                    None => run::<std::io::Sink>(&mut world, &options, None, &mut observer)
                        .map(|stats| ServeOutcome { stats, log_hash: None }),
                };
                kernel_hub.finish(result.as_ref().map(|o| o.stats.clone()).map_err(|e| e.to_string()));
                result
            })?;

        let (closing_tx, closing_rx) = watch::channel(false);
        let app = router(hub.clone(), closing_rx);
        let server = axum::serve(listener, app).with_graceful_shutdown(async move {
            shutdown.await;
            let _ = closing_tx.send(true);
        });
        server.await?;

        stop.store(true, Ordering::Relaxed);
        let outcome = tokio::task::spawn_blocking(move || kernel.join())
            .await
            .map_err(std::io::Error::other)?
            .map_err(|_| std::io::Error::other("kernel thread panicked"))??;
        Ok(outcome)
    }
}

#[derive(Clone)]
struct AppState {
    hub: Arc<Hub>,
    closing: watch::Receiver<bool>,
}

fn router(hub: Arc<Hub>, closing: watch::Receiver<bool>) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/healthz", get(health))
        .with_state(AppState { hub, closing })
}

async fn health(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(app.hub.health())
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(app): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, app))
}

async fn connection(socket: WebSocket, app: AppState) {
    let AppState { hub, mut closing } = app;
    hub.connection_opened();
    let mut frames = hub.subscribe_frames();
    let mut session = Session::new(&hub);
    let (mut sink, mut stream) = socket.split();
    loop {
        let outgoing: Vec<Frame> = tokio::select! {
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(text))) => session.handle(&text, &hub),
                Some(Ok(Message::Binary(_))) => {
                    vec![session.reject(&hub, FrameError::new(ErrorCode::Parse, "binary messages are not accepted"))]
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
            published = frames.recv() => match published {
                Ok(frame) => session.deliver(&frame).into_iter().collect(),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::warn!("client fell behind; {n} frames skipped");
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            _ = closing.changed() => break,
        };
        let mut failed = false;
        for f in outgoing {
            if sink.send(Message::Text(f.to_text())).await.is_err() {
                failed = true;
                break;
            }
        }
        if failed {
            break;
        }
    }
    let _ = sink.send(Message::Close(None)).await;
    hub.connection_closed();
}
