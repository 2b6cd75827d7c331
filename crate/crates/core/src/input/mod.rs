//! Device-agnostic input handling: per-side frames, spike filtering, the
//! virtual base frame and relative motion retargeting.

mod filter;
pub mod trace;

pub use filter::{FilterParams, InputFilter, Rejection};
pub use trace::{read_trace, write_trace, TraceError, TraceRecord};

use crate::geometry::{self, Pose};
use crate::kinematics::JointVector;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Button bit: while held, frames do not move the robot; on release the
/// side re-anchors its virtual base frame.
pub const BUTTON_CLUTCH: u32 = 1 << 0;
/// Button bit: re-anchor the virtual base frame on this frame.
pub const BUTTON_REANCHOR: u32 = 1 << 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputError {
    #[error("side is already calibrated; re-anchor instead")]
    AlreadyCalibrated,
    #[error("side has not been calibrated")]
    NotCalibrated,
    #[error("leader joint dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "L" | "left" => Ok(Side::Left),
            "R" | "right" => Ok(Side::Right),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// Which input modality drives the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeleopMode {
    Vr,
    LeaderFollower,
}

impl fmt::Display for TeleopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TeleopMode::Vr => "vr",
            TeleopMode::LeaderFollower => "leader_follower",
        })
    }
}

impl FromStr for TeleopMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vr" => Ok(TeleopMode::Vr),
            "leader_follower" => Ok(TeleopMode::LeaderFollower),
            other => Err(format!("unknown mode `{other}` (expected vr | leader_follower)")),
        }
    }
}

/// One device sample for one side.
///
/// The pose is kept exactly as it arrived (translation plus wxyz quaternion)
/// so that traces round-trip bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TeleopFrame {
    pub timestamp: f64,
    pub side: Side,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    pub leader_joints: Option<Vec<f64>>,
    pub gripper: f64,
    pub buttons: u32,
}

impl TeleopFrame {
    pub fn new(timestamp: f64, side: Side, pose: &Pose) -> Self {
        Self {
            timestamp,
            side,
            position: pose.xyz(),
            orientation: pose.quaternion_wxyz(),
            leader_joints: None,
            gripper: 0.0,
            buttons: 0,
        }
    }

    pub fn control_pose(&self) -> Pose {
        Pose::from_xyz_quat(self.position, self.orientation)
    }

    pub fn has_button(&self, mask: u32) -> bool {
        self.buttons & mask != 0
    }

    pub fn is_finite(&self) -> bool {
        let q_norm = self.orientation.iter().map(|v| v * v).sum::<f64>();
        self.timestamp.is_finite()
            && self.position.iter().all(|v| v.is_finite())
            && self.orientation.iter().all(|v| v.is_finite())
            && q_norm > 1e-12
            && q_norm.is_finite()
            && self.gripper.is_finite()
            && self
                .leader_joints
                .as_ref()
                .is_none_or(|j| j.iter().all(|v| v.is_finite()))
    }
}

/// Whether controller motion is applied in the shared world frame (left
/// multiplication onto the robot origin) or in the tool frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetargetFrame {
    #[default]
    World,
    Tool,
}

impl FromStr for RetargetFrame {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "world" => Ok(RetargetFrame::World),
            "tool" => Ok(RetargetFrame::Tool),
            other => Err(format!("unknown retarget frame `{other}` (expected world | tool)")),
        }
    }
}

/// Virtual base frame for one side: where the controller and the robot
/// were when the segment started.
#[derive(Debug, Clone, PartialEq)]
pub struct RetargetState {
    pub frame: RetargetFrame,
    pub controller_origin: Pose,
    pub robot_origin: Pose,
    pub calibrated: bool,
}

impl RetargetState {
    pub fn new(frame: RetargetFrame) -> Self {
        Self {
            frame,
            controller_origin: Pose::identity(),
            robot_origin: Pose::identity(),
            calibrated: false,
        }
    }

    /// Anchors the virtual base frame at `frame`'s pose and the robot at
    /// `robot_ee`.
    pub fn calibrate(&mut self, frame: &TeleopFrame, robot_ee: &Pose) -> Result<(), InputError> {
        if self.calibrated {
            return Err(InputError::AlreadyCalibrated);
        }
        self.controller_origin = frame.control_pose();
        self.robot_origin = *robot_ee;
        self.calibrated = true;
        Ok(())
    }

    /// Re-anchors on `frame` without moving the target: the robot origin
    /// becomes whatever the old anchoring would have produced for this
    /// frame.
    pub fn reanchor(&mut self, frame: &TeleopFrame) -> Result<(), InputError> {
        let target = self.retarget(frame)?;
        self.controller_origin = frame.control_pose();
        self.robot_origin = target;
        Ok(())
    }

    /// Re-anchors so that the next output is `hold` (used when leaving a
    /// clutch, where the held target is the continuation point).
    pub fn reanchor_at(&mut self, frame: &TeleopFrame, hold: &Pose) -> Result<(), InputError> {
        if !self.calibrated {
            return Err(InputError::NotCalibrated);
        }
        self.controller_origin = frame.control_pose();
        self.robot_origin = *hold;
        Ok(())
    }

    /// Clears the calibration so the next accepted frame anchors afresh.
    pub fn reset(&mut self) {
        self.calibrated = false;
    }

    /// Desired end-effector pose for `frame`.
    pub fn retarget(&self, frame: &TeleopFrame) -> Result<Pose, InputError> {
        self.retarget_pose(&frame.control_pose())
    }

    pub fn retarget_pose(&self, control_pose: &Pose) -> Result<Pose, InputError> {
        if !self.calibrated {
            return Err(InputError::NotCalibrated);
        }
        let delta = geometry::compose(&geometry::inverse(&self.controller_origin), control_pose);
        Ok(match self.frame {
            RetargetFrame::World => geometry::compose(&delta, &self.robot_origin),
            RetargetFrame::Tool => geometry::compose(&self.robot_origin, &delta),
        })
    }
}

/// Leader joint increment relative to the previous reading. Frames without
/// leader joints (VR) yield zeros of the anchor's dimension.
pub fn leader_joint_delta(frame: &TeleopFrame, anchor: &JointVector) -> Result<JointVector, InputError> {
    match &frame.leader_joints {
        None => Ok(JointVector::zeros(anchor.len())),
        Some(j) if j.len() != anchor.len() => Err(InputError::DimensionMismatch {
            expected: anchor.len(),
            got: j.len(),
        }),
        Some(j) => Ok(JointVector(JointVector::from_slice(j).0 - &anchor.0)),
    }
}
