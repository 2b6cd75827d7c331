//! Teleoperation gateway: a fixed-rate control loop owning one
//! [`Session`], a WebSocket endpoint for operator and observer clients,
//! and HTTP endpoints for the batch operations (replay, metrics, trace
//! generation) plus the chain and FK fixtures used by the cockpit.
//!
//! The control loop is the only place the session is touched. Clients
//! reach it through a bounded channel drained once per tick; state flows
//! back through a watch channel, so a slow client only ever sees the
//! latest snapshot and never delays the loop.

mod control;
mod http;
mod ws;

use biteleop_core::coordination::ReferencePoseLibrary;
use biteleop_core::session::{Session, SessionConfig};
use control::{Capture, ControlLoop, Recorder, Snapshot};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize};
use std::sync::{Arc, Mutex};
use thiserror::Error;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

pub use control::Inbound;

/// Inbound queue depth. About four ticks' worth of frames from two
/// 90 Hz devices fits with plenty of room; beyond this the sender is told
/// the server is busy.
const INBOUND_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
    #[error("cannot open recording directory {path}: {message}")]
    Record { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    pub config: SessionConfig,
    /// Live sessions are written here as `trace.txt` and `session.log`.
    pub record_dir: Option<PathBuf>,
    /// Reference capture: `record_ref` appends to this library file.
    /// Null-space control is switched off while capturing.
    pub capture_path: Option<PathBuf>,
    /// Run the control loop. Batch-only servers (the CLI's embedded
    /// instance) leave it off.
    pub live: bool,
}

impl ServerOptions {
    pub fn live(config: SessionConfig) -> Self {
        Self {
            config,
            live: true,
            ..Self::default()
        }
    }

    pub fn batch(config: SessionConfig) -> Self {
        Self {
            config,
            live: false,
            ..Self::default()
        }
    }
}

pub(crate) struct AppState {
    pub config: Arc<SessionConfig>,
    pub inbound: mpsc::Sender<Inbound>,
    pub snapshots: watch::Receiver<Snapshot>,
    pub operator_taken: AtomicBool,
    pub clients: AtomicUsize,
    pub dropped: AtomicU64,
    pub tick: Arc<AtomicU64>,
    pub live: bool,
    pub capture: bool,
    pub library: Arc<Mutex<ReferencePoseLibrary>>,
    pub recording: Option<String>,
    pub shutdown: watch::Receiver<bool>,
}

/// A running server. Dropping it does not stop the tasks; call
/// [`Gateway::shutdown`].
pub struct Gateway {
    pub addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    http: JoinHandle<()>,
    control: Option<JoinHandle<()>>,
    // Held so state subscribers stay open on a batch-only server.
    _publish: Option<watch::Sender<Snapshot>>,
}

impl Gateway {
    /// Stops the control loop, flushes any recording and closes all
    /// connections.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        if let Some(c) = self.control {
            let _ = c.await;
        }
        let _ = self.http.await;
    }

    /// Runs until the HTTP server exits (on shutdown or a fatal error).
    pub async fn wait(&mut self) {
        let _ = (&mut self.http).await;
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

/// Binds `addr` and starts serving. Port 0 picks a free port; the chosen
/// address is in [`Gateway::addr`].
pub async fn start(opts: ServerOptions, addr: SocketAddr) -> Result<Gateway, ServerError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServerError::PortInUse(addr.port())
        } else {
            ServerError::Bind {
                addr,
                message: e.to_string(),
            }
        }
    })?;
    let local = listener.local_addr().map_err(|e| ServerError::Bind {
        addr,
        message: e.to_string(),
    })?;

    let mut config = opts.config;
    let capture = opts.capture_path.is_some();
    if capture {
        config.nullspace_enabled = false;
    }
    let library = Arc::new(Mutex::new(config.library.clone()));
    let recorder = match &opts.record_dir {
        Some(dir) => Some(Recorder::create(dir).map_err(|e| ServerError::Record {
            path: dir.clone(),
            message: e.to_string(),
        })?),
        None => None,
    };

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let (inbound_tx, inbound_rx) = mpsc::channel(INBOUND_CAPACITY);
    let (publish_tx, publish_rx) = watch::channel(Snapshot { seq: 0, state: None });
    let tick = Arc::new(AtomicU64::new(0));

    let mut publish_tx = Some(publish_tx);
    let control = opts.live.then(|| {
        let lp = ControlLoop {
            session: Session::new(config.clone()),
            inbound: inbound_rx,
            publish: publish_tx.take().expect("one control loop"),
            recorder,
            capture: opts.capture_path.clone().map(|path| Capture {
                path,
                library: library.clone(),
            }),
            shutdown: shutdown_rx.clone(),
            tick_counter: tick.clone(),
        };
        tokio::spawn(lp.run())
    });

    let state = Arc::new(AppState {
        config: Arc::new(config),
        inbound: inbound_tx,
        snapshots: publish_rx,
        operator_taken: AtomicBool::new(false),
        clients: AtomicUsize::new(0),
        dropped: AtomicU64::new(0),
        tick,
        live: opts.live,
        capture,
        library,
        recording: opts.record_dir.map(|d| d.display().to_string()),
        shutdown: shutdown_rx.clone(),
    });

    let app = http::router(state);
    let mut stop = shutdown_rx;
    let http = tokio::spawn(async move {
        let served = axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop.wait_for(|s| *s).await;
            })
            .await;
        if let Err(e) = served {
            tracing::error!("server stopped: {e}");
        }
    });

    tracing::info!("listening on {local}");
    Ok(Gateway {
        addr: local,
        shutdown: shutdown_tx,
        http,
        control,
        _publish: publish_tx,
    })
}
