//! Session logs: one JSON object per tick, one tick per line.
//!
//! ```text
//! {"tick":1,"t":0.004,"mode":"vr","reference":0,"reference_distance":0.12,
//!  "left":{...arm...},"right":{...arm...}}
//! ```
//!
//! Arm fields: `q` (simulated joints), `cmd` (command after the safety
//! gate), `gripper`, `calibrated`, `clutched`, `filter` (`none`,
//! `accepted` or `rejected: <reason>`), `target` (xyz + quaternion wxyz or
//! null), `err_pos` (m), `err_rot` (rad), `ik_residual`, `tau_ext`,
//! `vibration`, `kinesthetic`, `watchdog` (`ok`, `tripped`, `cooldown`),
//! `trips` (joint, jump, velocity; null for non-finite) and `fault`.
//! Floats are written in shortest round-trip form, so parsing a log and
//! writing it again reproduces the file byte for byte.

use super::TickReport;
use crate::input::TeleopMode;
use crate::safety::WatchdogStatus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("log line {line}: {message}")]
pub struct LogError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedTrip {
    pub joint: usize,
    pub jump: Option<f64>,
    pub velocity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub q: Vec<f64>,
    pub cmd: Vec<f64>,
    pub gripper: f64,
    pub calibrated: bool,
    pub clutched: bool,
    pub filter: String,
    pub target: Option<[f64; 7]>,
    pub err_pos: Option<f64>,
    pub err_rot: Option<f64>,
    pub ik_residual: Option<f64>,
    pub tau_ext: Vec<f64>,
    pub vibration: f64,
    pub kinesthetic: Vec<f64>,
    pub watchdog: WatchdogStatus,
    pub trips: Vec<LoggedTrip>,
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub tick: u64,
    pub t: f64,
    pub mode: TeleopMode,
    pub reference: Option<usize>,
    pub reference_distance: Option<f64>,
    pub left: ArmRecord,
    pub right: ArmRecord,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ArmRecord {
    fn from_side(s: &super::SideReport) -> Self {
        Self {
            q: s.q.to_vec(),
            cmd: s.command.to_vec(),
            gripper: s.gripper,
            calibrated: s.calibrated,
            clutched: s.clutched,
            filter: s.filter.label(),
            target: s.target.map(|p| {
                let [x, y, z] = p.xyz();
                let [qw, qx, qy, qz] = p.quaternion_wxyz();
                [x, y, z, qw, qx, qy, qz]
            }),
            err_pos: s.tracking_error.and_then(|e| finite(e.0)),
            err_rot: s.tracking_error.and_then(|e| finite(e.1)),
            ik_residual: s.ik_residual.and_then(finite),
            tau_ext: s.tau_ext.to_vec(),
            vibration: s.vibration,
            kinesthetic: s.kinesthetic.clone(),
            watchdog: s.watchdog,
            trips: s
                .trips
                .iter()
                .map(|t| LoggedTrip {
                    joint: t.joint,
                    jump: finite(t.jump),
                    velocity: finite(t.velocity),
                })
                .collect(),
            fault: s.fault.clone(),
        }
    }
}

impl LogRecord {
    pub fn from_report(r: &TickReport) -> Self {
        Self {
            tick: r.tick,
            t: r.timestamp,
            mode: r.mode,
            reference: r.reference,
            reference_distance: r.reference_distance.and_then(finite),
            left: ArmRecord::from_side(&r.sides[0]),
            right: ArmRecord::from_side(&r.sides[1]),
        }
    }

    pub fn arm(&self, side: crate::input::Side) -> &ArmRecord {
        match side {
            crate::input::Side::Left => &self.left,
            crate::input::Side::Right => &self.right,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionLog {
    pub records: Vec<LogRecord>,
}

impl SessionLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line).map_err(|e| LogError {
                line: idx + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input::read_trace;
    use crate::session::scenario::{generate, Scenario, ScenarioSpec};
    use crate::session::{replay, SessionConfig};

    #[test]
    fn text_round_trip_is_exact() {
        let cfg = SessionConfig::default();
        let mut spec = ScenarioSpec::new(Scenario::Spike);
        spec.ticks = 150;
        let trace = generate(&spec, &cfg);
        let log = replay(&trace, &cfg).log;
        let text = log.to_text();
        let back = SessionLog::parse(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn empty_trace_gives_empty_log() {
        let log = replay(&read_trace("").unwrap(), &SessionConfig::default()).log;
        assert!(log.records.is_empty());
        assert_eq!(log.to_text(), "");
    }

    #[test]
    fn bad_lines_are_reported() {
        let e = SessionLog::parse("\n{\"tick\": 1}\n").unwrap_err();
        assert_eq!(e.line, 2);
    }
}
