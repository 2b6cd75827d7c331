//! `/ws`: one task pair per client.
//!
//! The first client that asks for the operator role gets it; later ones
//! are observers until the operator disconnects. Observers receive state
//! but their commands are refused. Malformed messages get an `error`
//! reply and the connection stays open.

use crate::control::Inbound;
use crate::AppState;
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use biteleop_core::protocol::{decode_command, encode_server, CommandMessage, Role, ServerMessage};
use biteleop_core::session::LiveInput;
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use tokio::sync::{mpsc, oneshot};

#[derive(Debug, Deserialize)]
pub struct WsQuery {
    /// `observer` to watch without taking the operator slot.
    role: Option<String>,
}

pub async fn upgrade(ws: WebSocketUpgrade, Query(q): Query<WsQuery>, State(app): State<Arc<AppState>>) -> Response {
    let wants_operator = q.role.as_deref() != Some("observer");
    ws.on_upgrade(move |socket| handle(socket, app, wants_operator))
}

/// Releases the operator slot and the client count on every exit path.
struct Slot {
    app: Arc<AppState>,
    operator: bool,
}

impl Drop for Slot {
    fn drop(&mut self) {
        if self.operator {
            self.app.operator_taken.store(false, Ordering::SeqCst);
        }
        self.app.clients.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn handle(socket: WebSocket, app: Arc<AppState>, wants_operator: bool) {
    app.clients.fetch_add(1, Ordering::SeqCst);
    let operator = wants_operator
        && app
            .operator_taken
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok();
    let slot = Slot {
        app: app.clone(),
        operator,
    };
    let role = if operator { Role::Operator } else { Role::Observer };

    let (mut sink, mut stream) = socket.split();
    let (reply_tx, mut reply_rx) = mpsc::channel::<ServerMessage>(64);

    let hello = ServerMessage::Hello {
        role,
        tick_rate: app.config.tick_rate,
        decimation: app.config.gateway.decimation,
    };
    if send(&mut sink, &hello).await.is_err() {
        return;
    }

    let mut snapshots = app.snapshots.clone();
    let mut shutdown = app.shutdown.clone();
    let writer_app = app.clone();
    let mut writer = tokio::spawn(async move {
        // Snapshots published before this client joined are not drops.
        let mut last_seq = snapshots.borrow_and_update().seq;
        let mut dropped = 0u64;
        loop {
            tokio::select! {
                changed = snapshots.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    let snap = snapshots.borrow_and_update().clone();
                    let gap = snap.seq.saturating_sub(last_seq).saturating_sub(1);
                    if gap > 0 {
                        dropped += gap;
                        writer_app.dropped.fetch_add(gap, Ordering::Relaxed);
                    }
                    last_seq = snap.seq;
                    let Some(state) = snap.state else { continue };
                    let mut state = (*state).clone();
                    state.dropped = dropped;
                    if send(&mut sink, &ServerMessage::State(Box::new(state))).await.is_err() {
                        break;
                    }
                }
                reply = reply_rx.recv() => {
                    let Some(reply) = reply else { break };
                    if send(&mut sink, &reply).await.is_err() {
                        break;
                    }
                }
                _ = async { let _ = shutdown.wait_for(|s| *s).await; } => {
                    let _ = sink.send(Message::Close(None)).await;
                    break;
                }
            }
        }
    });

    loop {
        let msg = tokio::select! {
            msg = stream.next() => msg,
            _ = &mut writer => break,
        };
        let text = match msg {
            Some(Ok(Message::Text(t))) => t,
            Some(Ok(Message::Binary(_))) => {
                let _ = reply_tx.send(ServerMessage::error("binary messages are not supported")).await;
                continue;
            }
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
            Some(Ok(_)) => continue,
        };
        if let Some(reply) = dispatch(&app, role, text.as_str()).await {
            if reply_tx.send(reply).await.is_err() {
                break;
            }
        }
    }
    writer.abort();
    drop(slot);
}

/// Handles one text message; returns the reply, if any. Frames are not
/// acknowledged: at device rate that would double the traffic.
async fn dispatch(app: &AppState, role: Role, text: &str) -> Option<ServerMessage> {
    let cmd = match decode_command(text) {
        Ok(c) => c,
        Err(e) => return Some(ServerMessage::from_parse_error(&e)),
    };
    let kind = cmd.kind();
    if role == Role::Observer {
        return Some(ServerMessage::Error {
            reason: "observers cannot send commands".into(),
            kind: Some(kind.into()),
            offset: None,
        });
    }
    if !app.live {
        return Some(refused(kind, "this server has no live session"));
    }
    let input = match cmd {
        CommandMessage::Frame(p) => LiveInput::Frame(p.to_frame()),
        CommandMessage::Calibrate { side } => LiveInput::Calibrate(side),
        CommandMessage::SetMode { mode } => LiveInput::SetMode(mode),
        CommandMessage::InjectWrench { side, force, torque } => {
            LiveInput::InjectWrench(side, CommandMessage::wrench(force, torque))
        }
        CommandMessage::Clutch { side, engaged } => LiveInput::Clutch(side, engaged),
        CommandMessage::RecordRef { label } => {
            return Some(match record_ref(app, label).await {
                Ok(index) => ServerMessage::Ack {
                    kind: kind.into(),
                    index: Some(index),
                },
                Err(reason) => refused(kind, &reason),
            });
        }
    };
    let is_frame = matches!(input, LiveInput::Frame(_));
    match app.inbound.try_send(Inbound::Input(input)) {
        Ok(()) if is_frame => None,
        Ok(()) => Some(ServerMessage::Ack {
            kind: kind.into(),
            index: None,
        }),
        Err(_) => Some(refused(kind, "server busy; message dropped")),
    }
}

pub(crate) async fn record_ref(app: &AppState, label: String) -> Result<usize, String> {
    if !app.capture {
        return Err("reference capture is only available in record-ref mode".into());
    }
    let (tx, rx) = oneshot::channel();
    app.inbound
        .send(Inbound::RecordRef { label, reply: tx })
        .await
        .map_err(|_| "control loop is not running".to_string())?;
    rx.await.map_err(|_| "control loop is not running".to_string())?
}

fn refused(kind: &str, reason: &str) -> ServerMessage {
    ServerMessage::Error {
        reason: reason.into(),
        kind: Some(kind.into()),
        offset: None,
    }
}

async fn send<S>(sink: &mut S, msg: &ServerMessage) -> Result<(), ()>
where
    S: futures::Sink<Message> + Unpin,
{
    let text = match encode_server(msg) {
        Ok(t) => t,
        Err(e) => {
            tracing::warn!("not sending {}: {e}", msg.kind());
            return Ok(());
        }
    };
    sink.send(Message::Text(Utf8Bytes::from(text))).await.map_err(|_| ())
}
