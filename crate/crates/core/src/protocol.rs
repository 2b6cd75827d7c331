//! Gateway wire protocol.
//!
//! Framing: one JSON object per message, terminated by `\n` on byte
//! streams; over WebSocket every text message carries exactly one object
//! (the trailing newline is optional). Every object starts with the
//! protocol version `"v":1` followed by `"type"`; the remaining fields
//! depend on the type. Numbers must be finite. `PROTOCOL.md` documents
//! every schema.

use crate::geometry::Pose;
use crate::input::{Side, TeleopFrame, TeleopMode};
use crate::safety::WatchdogStatus;
use crate::session::TickReport;
use crate::simulator::Wrench;
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;
/// Upper bound on an encoded state message.
pub const MAX_STATE_BYTES: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
    /// The message type, when it could be read.
    pub kind: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("{0} contains a non-finite number")]
    NonFinite(&'static str),
    #[error("state message is {0} bytes (limit {MAX_STATE_BYTES})")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramePayload {
    pub side: Side,
    /// Sender clock (s); the server restamps frames to session time.
    pub timestamp: f64,
    pub position: [f64; 3],
    /// Quaternion, w first.
    pub orientation: [f64; 4],
    pub gripper: f64,
    pub buttons: u32,
    pub leader_joints: Option<Vec<f64>>,
}

impl FramePayload {
    pub fn to_frame(&self) -> TeleopFrame {
        TeleopFrame {
            timestamp: self.timestamp,
            side: self.side,
            position: self.position,
            orientation: self.orientation,
            leader_joints: self.leader_joints.clone(),
            gripper: self.gripper,
            buttons: self.buttons,
        }
    }

    pub fn from_frame(f: &TeleopFrame) -> Self {
        Self {
            side: f.side,
            timestamp: f.timestamp,
            position: f.position,
            orientation: f.orientation,
            gripper: f.gripper,
            buttons: f.buttons,
            leader_joints: f.leader_joints.clone(),
        }
    }
}

/// Client → server.
#[derive(Debug, Clone, PartialEq)]
pub enum CommandMessage {
    Frame(FramePayload),
    Calibrate { side: Side },
    SetMode { mode: TeleopMode },
    InjectWrench { side: Side, force: [f64; 3], torque: [f64; 3] },
    RecordRef { label: String },
    Clutch { side: Side, engaged: bool },
}

impl CommandMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            CommandMessage::Frame(_) => "frame",
            CommandMessage::Calibrate { .. } => "calibrate",
            CommandMessage::SetMode { .. } => "set_mode",
            CommandMessage::InjectWrench { .. } => "inject_wrench",
            CommandMessage::RecordRef { .. } => "record_ref",
            CommandMessage::Clutch { .. } => "clutch",
        }
    }

    pub fn wrench(force: [f64; 3], torque: [f64; 3]) -> Wrench {
        Wrench {
            force: Vector3::from(force),
            torque: Vector3::from(torque),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseMsg {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl PoseMsg {
    pub fn from_pose(p: &Pose) -> Self {
        Self {
            position: p.xyz(),
            orientation: p.quaternion_wxyz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmState {
    pub q: Vec<f64>,
    pub ee: PoseMsg,
    pub target: Option<PoseMsg>,
    pub gripper: f64,
    pub calibrated: bool,
    pub clutched: bool,
    /// `none`, `accepted` or `rejected: <reason>` for this tick's frame.
    pub filter: String,
    pub watchdog: WatchdogStatus,
    pub tau_ext_norm: f64,
    pub vibration: f64,
    pub fault: Option<String>,
}

/// Keeps diagnostic strings short enough for the state size bound.
fn clip_text(mut s: String) -> String {
    const MAX: usize = 160;
    if s.len() > MAX {
        let mut cut = MAX;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateMessage {
    pub tick: u64,
    pub t: f64,
    pub mode: TeleopMode,
    pub reference: Option<usize>,
    pub left: ArmState,
    pub right: ArmState,
    /// State messages this client has missed because it read too slowly.
    pub dropped: u64,
}

impl StateMessage {
    pub fn from_report(r: &TickReport) -> Self {
        let arm = |s: &crate::session::SideReport| ArmState {
            q: s.q.to_vec(),
            ee: PoseMsg::from_pose(&s.ee),
            target: s.target.as_ref().map(PoseMsg::from_pose),
            gripper: s.gripper,
            calibrated: s.calibrated,
            clutched: s.clutched,
            filter: clip_text(s.filter.label()),
            watchdog: s.watchdog,
            tau_ext_norm: s.tau_ext.norm(),
            vibration: s.vibration,
            fault: s.fault.clone().map(clip_text),
        };
        Self {
            tick: r.tick,
            t: r.timestamp,
            mode: r.mode,
            reference: r.reference,
            left: arm(&r.sides[0]),
            right: arm(&r.sides[1]),
            dropped: 0,
        }
    }

    pub fn arm(&self, side: Side) -> &ArmState {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    fn is_finite(&self) -> bool {
        let arm_ok = |a: &ArmState| {
            a.q.iter()
                .chain(&a.ee.position)
                .chain(&a.ee.orientation)
                .chain(a.target.iter().flat_map(|p| p.position.iter().chain(&p.orientation)))
                .chain([&a.gripper, &a.tau_ext_norm, &a.vibration])
                .all(|v| v.is_finite())
        };
        self.t.is_finite() && arm_ok(&self.left) && arm_ok(&self.right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Frames and commands from this client reach the session.
    Operator,
    /// Receives state; frames are refused.
    Observer,
}

/// Server → client.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Hello { role: Role, tick_rate: f64, decimation: u32 },
    State(Box<StateMessage>),
    Ack { kind: String, index: Option<usize> },
    Error { reason: String, kind: Option<String>, offset: Option<usize> },
}

impl ServerMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerMessage::Hello { .. } => "hello",
            ServerMessage::State(_) => "state",
            ServerMessage::Ack { .. } => "ack",
            ServerMessage::Error { .. } => "error",
        }
    }

    pub fn error(reason: impl Into<String>) -> Self {
        ServerMessage::Error {
            reason: reason.into(),
            kind: None,
            offset: None,
        }
    }

    pub fn from_parse_error(e: &ParseError) -> Self {
        ServerMessage::Error {
            reason: e.message.clone(),
            kind: e.kind.clone(),
            offset: Some(e.offset),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SideBody {
    side: Side,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeBody {
    mode: TeleopMode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WrenchBody {
    side: Side,
    force: [f64; 3],
    torque: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    label: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClutchBody {
    side: Side,
    engaged: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HelloBody {
    role: Role,
    tick_rate: f64,
    decimation: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AckBody {
    kind: String,
    index: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorBody {
    reason: String,
    kind: Option<String>,
    offset: Option<usize>,
}

/// `{"v":1,"type":"<kind>",<fields of body>}` plus the newline.
fn envelope<T: Serialize>(kind: &str, body: &T) -> String {
    let inner = serde_json::to_string(body).expect("protocol bodies always serialize");
    let fields = &inner[1..inner.len() - 1];
    let mut out = format!("{{\"v\":{PROTOCOL_VERSION},\"type\":\"{kind}\"");
    if !fields.is_empty() {
        out.push(',');
        out.push_str(fields);
    }
    out.push_str("}\n");
    out
}

fn finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

pub fn encode_command(msg: &CommandMessage) -> Result<String, EncodeError> {
    let kind = msg.kind();
    Ok(match msg {
        CommandMessage::Frame(f) => {
            let ok = f.timestamp.is_finite()
                && finite(&f.position)
                && finite(&f.orientation)
                && f.gripper.is_finite()
                && f.leader_joints.as_deref().is_none_or(finite);
            if !ok {
                return Err(EncodeError::NonFinite(kind));
            }
            envelope(kind, f)
        }
        CommandMessage::Calibrate { side } => envelope(kind, &SideBody { side: *side }),
        CommandMessage::SetMode { mode } => envelope(kind, &ModeBody { mode: *mode }),
        CommandMessage::InjectWrench { side, force, torque } => {
            if !finite(force) || !finite(torque) {
                return Err(EncodeError::NonFinite(kind));
            }
            envelope(
                kind,
                &WrenchBody {
                    side: *side,
                    force: *force,
                    torque: *torque,
                },
            )
        }
        CommandMessage::RecordRef { label } => envelope(kind, &LabelBody { label: label.clone() }),
        CommandMessage::Clutch { side, engaged } => envelope(
            kind,
            &ClutchBody {
                side: *side,
                engaged: *engaged,
            },
        ),
    })
}

pub fn encode_server(msg: &ServerMessage) -> Result<String, EncodeError> {
    let kind = msg.kind();
    Ok(match msg {
        ServerMessage::Hello {
            role,
            tick_rate,
            decimation,
        } => {
            if !tick_rate.is_finite() {
                return Err(EncodeError::NonFinite(kind));
            }
            envelope(
                kind,
                &HelloBody {
                    role: *role,
                    tick_rate: *tick_rate,
                    decimation: *decimation,
                },
            )
        }
        ServerMessage::State(s) => {
            if !s.is_finite() {
                return Err(EncodeError::NonFinite(kind));
            }
            let text = envelope(kind, s.as_ref());
            if text.len() >= MAX_STATE_BYTES {
                return Err(EncodeError::TooLarge(text.len()));
            }
            text
        }
        ServerMessage::Ack { kind: k, index } => envelope(
            kind,
            &AckBody {
                kind: k.clone(),
                index: *index,
            },
        ),
        ServerMessage::Error { reason, kind: k, offset } => envelope(
            kind,
            &ErrorBody {
                reason: reason.clone(),
                kind: k.clone(),
                offset: *offset,
            },
        ),
    })
}

/// Byte offset of a serde_json error inside single- or multi-line text.
fn error_offset(text: &str, e: &serde_json::Error) -> usize {
    if e.is_eof() {
        return text.len();
    }
    let (line, column) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Reads the envelope: checks the version and returns the type and the
/// remaining fields.
fn open(text: &str) -> Result<(String, Value), ParseError> {
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    if trimmed.contains('\n') {
        return Err(ParseError {
            offset: trimmed.find('\n').unwrap_or(0),
            message: "one message per line".into(),
            kind: None,
        });
    }
    let value: Value = serde_json::from_str(trimmed).map_err(|e| ParseError {
        offset: error_offset(trimmed, &e),
        message: e.to_string(),
        kind: None,
    })?;
    let end = trimmed.len();
    let Value::Object(mut map) = value else {
        return Err(ParseError {
            offset: 0,
            message: "message must be a JSON object".into(),
            kind: None,
        });
    };
    let kind = match map.remove("type") {
        Some(Value::String(k)) => k,
        _ => {
            return Err(ParseError {
                offset: end,
                message: "missing string field \"type\"".into(),
                kind: None,
            })
        }
    };
    match map.remove("v") {
        Some(Value::Number(n)) if n.as_u64() == Some(PROTOCOL_VERSION as u64) => {}
        Some(other) => {
            return Err(ParseError {
                offset: end,
                message: format!("unsupported protocol version {other}"),
                kind: Some(kind),
            })
        }
        None => {
            return Err(ParseError {
                offset: end,
                message: "missing field \"v\"".into(),
                kind: Some(kind),
            })
        }
    }
    Ok((kind, Value::Object(map)))
}

fn body<T: DeserializeOwned>(kind: &str, fields: Value, end: usize) -> Result<T, ParseError> {
    serde_json::from_value(fields).map_err(|e| ParseError {
        offset: end,
        message: format!("{kind}: {e}"),
        kind: Some(kind.to_string()),
    })
}

pub fn decode_command(text: &str) -> Result<CommandMessage, ParseError> {
    let (kind, fields) = open(text)?;
    let end = text.trim_end_matches('\n').len();
    let msg = match kind.as_str() {
        "frame" => CommandMessage::Frame(body(&kind, fields, end)?),
        "calibrate" => {
            let b: SideBody = body(&kind, fields, end)?;
            CommandMessage::Calibrate { side: b.side }
        }
        "set_mode" => {
            let b: ModeBody = body(&kind, fields, end)?;
            CommandMessage::SetMode { mode: b.mode }
        }
        "inject_wrench" => {
            let b: WrenchBody = body(&kind, fields, end)?;
            CommandMessage::InjectWrench {
                side: b.side,
                force: b.force,
                torque: b.torque,
            }
        }
        "record_ref" => {
            let b: LabelBody = body(&kind, fields, end)?;
            CommandMessage::RecordRef { label: b.label }
        }
        "clutch" => {
            let b: ClutchBody = body(&kind, fields, end)?;
            CommandMessage::Clutch {
                side: b.side,
                engaged: b.engaged,
            }
        }
        _ => {
            return Err(ParseError {
                offset: end,
                message: format!("unknown message type {kind:?}"),
                kind: Some(kind),
            })
        }
    };
    Ok(msg)
}

pub fn decode_server(text: &str) -> Result<ServerMessage, ParseError> {
    let (kind, fields) = open(text)?;
    let end = text.trim_end_matches('\n').len();
    let msg = match kind.as_str() {
        "hello" => {
            let b: HelloBody = body(&kind, fields, end)?;
            ServerMessage::Hello {
                role: b.role,
                tick_rate: b.tick_rate,
                decimation: b.decimation,
            }
        }
        "state" => ServerMessage::State(Box::new(body(&kind, fields, end)?)),
        "ack" => {
            let b: AckBody = body(&kind, fields, end)?;
            ServerMessage::Ack {
                kind: b.kind,
                index: b.index,
            }
        }
        "error" => {
            let b: ErrorBody = body(&kind, fields, end)?;
            ServerMessage::Error {
                reason: b.reason,
                kind: b.kind,
                offset: b.offset,
            }
        }
        _ => {
            return Err(ParseError {
                offset: end,
                message: format!("unknown message type {kind:?}"),
                kind: Some(kind),
            })
        }
    };
    Ok(msg)
}

/// Fixed messages of every kind, used by the golden files.
pub fn samples() -> (Vec<CommandMessage>, Vec<ServerMessage>) {
    use std::f64::consts::FRAC_1_SQRT_2;
    let arm = |q0: f64| ArmState {
        q: vec![q0, -0.4, 0.0, 1.1, 0.0, 0.9, 0.0],
        ee: PoseMsg {
            position: [0.4089, 0.0, 0.6876],
            orientation: [0.0, 1.0, 0.0, 0.0],
        },
        target: Some(PoseMsg {
            position: [0.41, 0.0, 0.69],
            orientation: [0.0, 1.0, 0.0, 0.0],
        }),
        gripper: 0.25,
        calibrated: true,
        clutched: false,
        filter: "accepted".into(),
        watchdog: WatchdogStatus::Ok,
        tau_ext_norm: 1.5,
        vibration: 0.3,
        fault: None,
    };
    let commands = vec![
        CommandMessage::Frame(FramePayload {
            side: Side::Left,
            timestamp: 12.5,
            position: [0.35, 0.2, 1.0],
            orientation: [1.0, 0.0, 0.0, 0.0],
            gripper: 0.5,
            buttons: 0,
            leader_joints: None,
        }),
        CommandMessage::Frame(FramePayload {
            side: Side::Right,
            timestamp: 12.504,
            position: [0.35, -0.2, 1.0],
            orientation: [FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2, 0.0],
            gripper: 0.0,
            buttons: 1,
            leader_joints: Some(vec![0.0, -0.4, 0.0, 1.1, 0.0, 0.9, 0.0]),
        }),
        CommandMessage::Calibrate { side: Side::Right },
        CommandMessage::SetMode {
            mode: TeleopMode::LeaderFollower,
        },
        CommandMessage::InjectWrench {
            side: Side::Left,
            force: [0.0, 0.0, -10.0],
            torque: [0.0, 0.5, 0.0],
        },
        CommandMessage::RecordRef {
            label: "grasp handle".into(),
        },
        CommandMessage::Clutch {
            side: Side::Left,
            engaged: true,
        },
    ];
    let mut tripped = arm(0.1);
    tripped.watchdog = WatchdogStatus::Tripped;
    tripped.target = None;
    tripped.filter = "rejected: non-finite sample".into();
    tripped.fault = Some("ik: matrix is singular".into());
    let server = vec![
        ServerMessage::Hello {
            role: Role::Operator,
            tick_rate: 250.0,
            decimation: 4,
        },
        ServerMessage::State(Box::new(StateMessage {
            tick: 1200,
            t: 4.8,
            mode: TeleopMode::Vr,
            reference: Some(3),
            left: arm(0.0),
            right: tripped,
            dropped: 2,
        })),
        ServerMessage::Ack {
            kind: "record_ref".into(),
            index: Some(4),
        },
        ServerMessage::Error {
            reason: "unknown message type \"teleport\"".into(),
            kind: Some("teleport".into()),
            offset: Some(31),
        },
    ];
    (commands, server)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_round_trips() {
        let (commands, server) = samples();
        for m in &commands {
            let text = encode_command(m).unwrap();
            assert!(text.ends_with('\n') && text.starts_with("{\"v\":1,\"type\":"));
            assert_eq!(&decode_command(&text).unwrap(), m);
            assert_eq!(&decode_command(text.trim_end()).unwrap(), m);
        }
        for m in &server {
            let text = encode_server(m).unwrap();
            assert_eq!(&decode_server(&text).unwrap(), m);
        }
    }

    #[test]
    fn truncated_message_reports_offset() {
        let (commands, _) = samples();
        let text = encode_command(&commands[0]).unwrap();
        let cut = &text[..40];
        let e = decode_command(cut).unwrap_err();
        assert_eq!(e.offset, 40);
    }

    #[test]
    fn unknown_kind_names_it() {
        let e = decode_command("{\"v\":1,\"type\":\"teleport\",\"side\":\"left\"}").unwrap_err();
        assert_eq!(e.kind.as_deref(), Some("teleport"));
        assert!(e.message.contains("teleport"));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        for bad in [
            "",
            "[]",
            "{\"type\":\"calibrate\",\"side\":\"left\"}",
            "{\"v\":2,\"type\":\"calibrate\",\"side\":\"left\"}",
            "{\"v\":1,\"type\":\"calibrate\",\"side\":\"middle\"}",
            "{\"v\":1,\"type\":\"calibrate\",\"side\":\"left\",\"extra\":1}",
            "{\"v\":1,\"type\":\"clutch\",\"side\":\"left\"}",
            "{\"v\":1,\"type\":\"calibrate\",\"side\":\"left\"}\n{\"v\":1}",
        ] {
            assert!(decode_command(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn nan_is_refused() {
        let (commands, server) = samples();
        let CommandMessage::Frame(mut f) = commands[0].clone() else { panic!() };
        f.position[1] = f64::NAN;
        assert_eq!(encode_command(&CommandMessage::Frame(f)), Err(EncodeError::NonFinite("frame")));
        let ServerMessage::State(mut s) = server[1].clone() else { panic!() };
        s.left.ee.position[0] = f64::NAN;
        assert_eq!(encode_server(&ServerMessage::State(s)), Err(EncodeError::NonFinite("state")));
    }

    #[test]
    fn state_stays_under_size_limit() {
        let (_, server) = samples();
        let ServerMessage::State(mut s) = server[1].clone() else { panic!() };
        s.left.fault = Some("x".repeat(5000));
        assert!(matches!(encode_server(&ServerMessage::State(s)), Err(EncodeError::TooLarge(_))));
        assert!(encode_server(&server[1]).unwrap().len() < MAX_STATE_BYTES);
    }
}
