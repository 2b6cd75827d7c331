//! Watchdog gate on commanded joint motion. It runs inline, per tick, on the
//! final command before it reaches the follower.

use crate::kinematics::JointVector;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripAction {
    /// Re-issue the previous command.
    Halt,
    /// Scale the step down to the allowed boundary.
    Attenuate,
}

impl FromStr for TripAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "halt" => Ok(TripAction::Halt),
            "attenuate" => Ok(TripAction::Attenuate),
            other => Err(format!("unknown trip action `{other}` (expected halt | attenuate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatchdogPolicy {
    pub max_joint_velocity: f64,
    pub max_tick_jump: f64,
    pub trip_action: TripAction,
    pub cooldown_ticks: u32,
    /// Fraction of each step let through while cooling down in attenuate
    /// mode.
    pub cooldown_scale: f64,
}

impl Default for WatchdogPolicy {
    fn default() -> Self {
        Self {
            max_joint_velocity: 3.0,
            max_tick_jump: 0.1,
            trip_action: TripAction::Attenuate,
            cooldown_ticks: 20,
            cooldown_scale: 0.5,
        }
    }
}

impl WatchdogPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_joint_velocity > 0.0 && self.max_joint_velocity.is_finite()) {
            return Err("max_joint_velocity must be finite and > 0".into());
        }
        if !(self.max_tick_jump > 0.0 && self.max_tick_jump.is_finite()) {
            return Err("max_tick_jump must be finite and > 0".into());
        }
        if !(self.cooldown_scale >= 0.0 && self.cooldown_scale <= 1.0) {
            return Err("cooldown_scale must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripDetail {
    pub joint: usize,
    /// `|next − prev|` (rad); infinite for non-finite commands.
    pub jump: f64,
    /// `jump / dt` (rad/s).
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Tripped(Vec<TripDetail>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Trips on any joint whose step exceeds `max_tick_jump` or whose implied
/// speed exceeds `max_joint_velocity`. Equality passes. A non-finite or
/// mis-sized command trips on every affected joint.
pub fn check(prev: &JointVector, next: &JointVector, dt: f64, policy: &WatchdogPolicy) -> Verdict {
    let mut trips = Vec::new();
    if prev.len() != next.len() {
        return Verdict::Tripped(
            (0..prev.len().max(next.len()))
                .map(|joint| TripDetail {
                    joint,
                    jump: f64::INFINITY,
                    velocity: f64::INFINITY,
                })
                .collect(),
        );
    }
    for (joint, (a, b)) in prev.iter().zip(next.iter()).enumerate() {
        let jump = (b - a).abs();
        let jump = if jump.is_finite() { jump } else { f64::INFINITY };
        let velocity = if dt > 0.0 { jump / dt } else { f64::INFINITY };
        if jump > policy.max_tick_jump || velocity > policy.max_joint_velocity || !(dt > 0.0) {
            trips.push(TripDetail { joint, jump, velocity });
        }
    }
    if trips.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Tripped(trips)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WatchdogStatus {
    Ok,
    Tripped,
    Cooldown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub command: JointVector,
    pub verdict: Verdict,
    pub status: WatchdogStatus,
}

/// Stateful gate: applies the trip action and runs the cooldown counter.
#[derive(Debug, Clone)]
pub struct Watchdog {
    pub policy: WatchdogPolicy,
    cooldown_remaining: u32,
    trips: u64,
}

impl Watchdog {
    pub fn new(policy: WatchdogPolicy) -> Self {
        Self {
            policy,
            cooldown_remaining: 0,
            trips: 0,
        }
    }

    pub fn trips(&self) -> u64 {
        self.trips
    }

    pub fn in_cooldown(&self) -> bool {
        self.cooldown_remaining > 0
    }

    /// Starts (or restarts) the cooldown window after a trip.
    pub fn engage_cooldown(&mut self) {
        self.cooldown_remaining = self.policy.cooldown_ticks;
    }

    /// Largest uniform scale in `[0, 1]` keeping every joint within both
    /// limits.
    fn boundary_scale(&self, prev: &JointVector, next: &JointVector, dt: f64) -> f64 {
        let limit = self.policy.max_tick_jump.min(self.policy.max_joint_velocity * dt);
        prev.iter()
            .zip(next.iter())
            .map(|(a, b)| {
                let jump = (b - a).abs();
                if jump > limit {
                    limit / jump
                } else {
                    1.0
                }
            })
            .fold(1.0, f64::min)
    }

    fn scaled(prev: &JointVector, next: &JointVector, s: f64) -> JointVector {
        JointVector(&prev.0 + (&next.0 - &prev.0) * s)
    }

    pub fn gate(&mut self, prev: &JointVector, next: &JointVector, dt: f64) -> GateOutcome {
        let verdict = check(prev, next, dt, &self.policy);
        match verdict {
            Verdict::Tripped(_) => {
                self.trips += 1;
                self.engage_cooldown();
                let usable = next.len() == prev.len() && next.is_finite() && dt > 0.0 && dt.is_finite();
                let command = match self.policy.trip_action {
                    TripAction::Attenuate if usable => {
                        let s = self.boundary_scale(prev, next, dt);
                        let mut out = Self::scaled(prev, next, s);
                        for (o, p) in out.iter_mut().zip(prev.iter()) {
                            *o = within_jump(*p, *o, self.policy.max_tick_jump);
                        }
                        out
                    }
                    _ => prev.clone(),
                };
                GateOutcome {
                    command,
                    verdict,
                    status: WatchdogStatus::Tripped,
                }
            }
            Verdict::Pass if self.cooldown_remaining > 0 => {
                self.cooldown_remaining -= 1;
                let command = match self.policy.trip_action {
                    TripAction::Halt => prev.clone(),
                    TripAction::Attenuate => Self::scaled(prev, next, self.policy.cooldown_scale),
                };
                GateOutcome {
                    command,
                    verdict,
                    status: WatchdogStatus::Cooldown,
                }
            }
            Verdict::Pass => GateOutcome {
                command: next.clone(),
                verdict,
                status: WatchdogStatus::Ok,
            },
        }
    }
}

/// Pulls `o` toward `p` until `|o − p| <= lim` holds in floating point;
/// `p ± lim` alone can round a hair past the boundary.
fn within_jump(p: f64, o: f64, lim: f64) -> f64 {
    if (o - p).abs() <= lim {
        return o;
    }
    let dir = (o - p).signum();
    let mut step = lim;
    let mut out = p + dir * step;
    while (out - p).abs() > lim {
        step *= 1.0 - 4.0 * f64::EPSILON;
        out = p + dir * step;
    }
    out
}
