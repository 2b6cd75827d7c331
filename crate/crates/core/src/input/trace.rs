//! Teleop trace files.
//!
//! One record per line, fields separated by single spaces, floats written
//! in Rust's shortest round-trip form (so `write(read(f)) == f` for any file
//! this module wrote):
//!
//! ```text
//! <t> frame <L|R> <x> <y> <z> <qw> <qx> <qy> <qz> <gripper> <buttons> <joints|->
//! <t> idle
//! <t> wrench <L|R> <fx> <fy> <fz> <tx> <ty> <tz>
//! <t> mode <vr|leader_follower>
//! ```
//!
//! `joints` is a comma-separated list of leader joint angles, or `-` when the
//! frame carries none. Records sharing a timestamp form one control tick.
//! Timestamps must be finite and non-decreasing, and frames of the same side
//! must have strictly increasing timestamps. Blank lines and lines starting
//! with `#` are skipped.

use super::{Side, TeleopFrame, TeleopMode};
use crate::simulator::Wrench;
use nalgebra::Vector3;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Frame(TeleopFrame),
    Idle { timestamp: f64 },
    Wrench { timestamp: f64, side: Side, wrench: Wrench },
    Mode { timestamp: f64, mode: TeleopMode },
}

impl TraceRecord {
    pub fn timestamp(&self) -> f64 {
        match self {
            TraceRecord::Frame(f) => f.timestamp,
            TraceRecord::Idle { timestamp }
            | TraceRecord::Wrench { timestamp, .. }
            | TraceRecord::Mode { timestamp, .. } => *timestamp,
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError {
        line,
        message: message.into(),
    }
}

fn num(line: usize, what: &str, s: &str) -> Result<f64, TraceError> {
    s.parse::<f64>()
        .map_err(|_| err(line, format!("bad {what} `{s}`")))
}

fn parse_line(line: usize, text: &str) -> Result<TraceRecord, TraceError> {
    let fields: Vec<&str> = text.split(' ').collect();
    let timestamp = num(line, "timestamp", fields[0])?;
    if !timestamp.is_finite() {
        return Err(err(line, "timestamp must be finite"));
    }
    let kind = fields.get(1).copied().ok_or_else(|| err(line, "missing record kind"))?;
    let expect = |n: usize| {
        if fields.len() == n {
            Ok(())
        } else {
            Err(err(line, format!("`{kind}` record needs {} fields, found {}", n, fields.len())))
        }
    };
    match kind {
        "frame" => {
            expect(13)?;
            let side: Side = fields[2].parse().map_err(|m: String| err(line, m))?;
            let mut v = [0.0; 8];
            for (o, s) in v.iter_mut().zip(&fields[3..11]) {
                *o = num(line, "pose/gripper value", s)?;
            }
            let buttons = fields[11]
                .parse::<u32>()
                .map_err(|_| err(line, format!("bad buttons `{}`", fields[11])))?;
            let leader_joints = match fields[12] {
                "-" => None,
                list => Some(
                    list.split(',')
                        .map(|s| num(line, "joint value", s))
                        .collect::<Result<Vec<_>, _>>()?,
                ),
            };
            Ok(TraceRecord::Frame(TeleopFrame {
                timestamp,
                side,
                position: [v[0], v[1], v[2]],
                orientation: [v[3], v[4], v[5], v[6]],
                leader_joints,
                gripper: v[7],
                buttons,
            }))
        }
        "idle" => {
            expect(2)?;
            Ok(TraceRecord::Idle { timestamp })
        }
        "wrench" => {
            expect(9)?;
            let side: Side = fields[2].parse().map_err(|m: String| err(line, m))?;
            let mut v = [0.0; 6];
            for (o, s) in v.iter_mut().zip(&fields[3..9]) {
                *o = num(line, "wrench value", s)?;
            }
            Ok(TraceRecord::Wrench {
                timestamp,
                side,
                wrench: Wrench {
                    force: Vector3::new(v[0], v[1], v[2]),
                    torque: Vector3::new(v[3], v[4], v[5]),
                },
            })
        }
        "mode" => {
            expect(3)?;
            let mode = fields[2].parse().map_err(|m: String| err(line, m))?;
            Ok(TraceRecord::Mode { timestamp, mode })
        }
        other => Err(err(line, format!("unknown record kind `{other}`"))),
    }
}

/// Parses and validates a trace.
pub fn read_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    let mut last_side_t = [f64::NEG_INFINITY; 2];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let rec = parse_line(line, raw)?;
        let t = rec.timestamp();
        if t < last_t {
            return Err(err(line, format!("timestamp {t} goes backwards (previous {last_t})")));
        }
        if let TraceRecord::Frame(f) = &rec {
            let prev = &mut last_side_t[f.side.index()];
            if t <= *prev {
                return Err(err(
                    line,
                    format!("{} frame timestamp {t} does not strictly increase (previous {prev})", f.side),
                ));
            }
            *prev = t;
        }
        last_t = t;
        out.push(rec);
    }
    Ok(out)
}

fn push_record(s: &mut String, rec: &TraceRecord) {
    match rec {
        TraceRecord::Frame(f) => {
            let joints = match &f.leader_joints {
                None => "-".to_string(),
                Some(j) => j.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            };
            let _ = writeln!(
                s,
                "{} frame {} {} {} {} {} {} {} {} {} {} {}",
                f.timestamp,
                f.side.short(),
                f.position[0],
                f.position[1],
                f.position[2],
                f.orientation[0],
                f.orientation[1],
                f.orientation[2],
                f.orientation[3],
                f.gripper,
                f.buttons,
                joints
            );
        }
        TraceRecord::Idle { timestamp } => {
            let _ = writeln!(s, "{timestamp} idle");
        }
        TraceRecord::Wrench { timestamp, side, wrench } => {
            let _ = writeln!(
                s,
                "{} wrench {} {} {} {} {} {} {}",
                timestamp,
                side.short(),
                wrench.force.x,
                wrench.force.y,
                wrench.force.z,
                wrench.torque.x,
                wrench.torque.y,
                wrench.torque.z
            );
        }
        TraceRecord::Mode { timestamp, mode } => {
            let _ = writeln!(s, "{timestamp} mode {mode}");
        }
    }
}

pub fn write_trace(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        push_record(&mut s, r);
    }
    s
}

/// Serializes one record as a trace line (with trailing newline).
pub fn format_record(rec: &TraceRecord) -> String {
    let mut s = String::new();
    push_record(&mut s, rec);
    s
}
