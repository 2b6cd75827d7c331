//! The control loop task: sole owner of the session.

use biteleop_core::coordination::ReferencePoseLibrary;
use biteleop_core::input::{write_trace, Side};
use biteleop_core::protocol::StateMessage;
use biteleop_core::session::{LiveInput, LogRecord, Session, SessionConfig};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::MissedTickBehavior;

/// Messages from connection handlers to the control loop.
#[derive(Debug)]
pub enum Inbound {
    Input(LiveInput),
    RecordRef {
        label: String,
        reply: oneshot::Sender<Result<usize, String>>,
    },
}

/// A published snapshot. `seq` counts publications so readers can tell
/// how many they skipped.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub seq: u64,
    pub state: Option<Arc<StateMessage>>,
}

/// Where live sessions are written: `trace.txt` replays to `session.log`.
pub struct Recorder {
    trace: BufWriter<File>,
    log: BufWriter<File>,
}

impl Recorder {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            trace: BufWriter::new(File::create(dir.join("trace.txt"))?),
            log: BufWriter::new(File::create(dir.join("session.log"))?),
        })
    }

    fn write(&mut self, records: &[biteleop_core::input::TraceRecord], log: &LogRecord) -> std::io::Result<()> {
        self.trace.write_all(write_trace(records).as_bytes())?;
        self.log.write_all(log.to_line().as_bytes())?;
        self.log.write_all(b"\n")
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.trace.flush()?;
        self.log.flush()
    }
}

/// Reference capture: `record_ref` appends the current commands here.
pub struct Capture {
    pub path: PathBuf,
    pub library: Arc<Mutex<ReferencePoseLibrary>>,
}

pub struct ControlLoop {
    pub session: Session,
    pub inbound: mpsc::Receiver<Inbound>,
    pub publish: watch::Sender<Snapshot>,
    pub recorder: Option<Recorder>,
    pub capture: Option<Capture>,
    pub shutdown: watch::Receiver<bool>,
    pub tick_counter: Arc<std::sync::atomic::AtomicU64>,
}

impl ControlLoop {
    pub async fn run(mut self) {
        let config: SessionConfig = self.session.config().clone();
        let period = Duration::from_secs_f64(config.dt());
        let decimation = u64::from(config.gateway.decimation);
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
        let mut seq = 0u64;
        loop {
            tokio::select! {
                _ = interval.tick() => {}
                _ = self.shutdown.changed() => break,
            }
            let mut inputs = Vec::new();
            while let Ok(msg) = self.inbound.try_recv() {
                match msg {
                    Inbound::Input(i) => inputs.push(i),
                    Inbound::RecordRef { label, reply } => {
                        let _ = reply.send(self.record_reference(&label));
                    }
                }
            }
            let (report, records) = self.session.live_tick(inputs);
            self.tick_counter.store(report.tick, std::sync::atomic::Ordering::Relaxed);
            if let Some(rec) = self.recorder.as_mut() {
                if let Err(e) = rec.write(&records, &LogRecord::from_report(&report)) {
                    tracing::error!("recording stopped: {e}");
                    self.recorder = None;
                }
            }
            if report.tick % decimation == 0 {
                seq += 1;
                let state = StateMessage::from_report(&report);
                self.publish.send_replace(Snapshot {
                    seq,
                    state: Some(Arc::new(state)),
                });
                if let Some(rec) = self.recorder.as_mut() {
                    let _ = rec.flush();
                }
            }
        }
        if let Some(rec) = self.recorder.as_mut() {
            let _ = rec.flush();
        }
    }

    fn record_reference(&mut self, label: &str) -> Result<usize, String> {
        let capture = self
            .capture
            .as_mut()
            .ok_or_else(|| "reference capture is only available in record-ref mode".to_string())?;
        let left = self.session.command(Side::Left).clone();
        let right = self.session.command(Side::Right).clone();
        let mut library = capture.library.lock().map_err(|_| "library lock poisoned".to_string())?;
        library
            .record_to_file(&capture.path, left, right, label)
            .map_err(|e| e.to_string())
    }
}
