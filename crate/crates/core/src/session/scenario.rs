//! Synthetic teleop traces for tests and demos.
//!
//! All scenarios emit one frame per side per tick at the configured tick
//! rate, starting at `t = dt`. Control poses start at fixed points in front
//! of the operator and move relative to those; the session calibrates on the
//! first frame, so only the relative motion matters.

use super::SessionConfig;
use crate::geometry::{Pose, Twist};
use crate::input::{Side, TeleopFrame, TeleopMode, TraceRecord, BUTTON_CLUTCH, BUTTON_REANCHOR};
use crate::kinematics::JointVector;
use crate::simulator::Wrench;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// 10 cm straight line along +x, then hold.
    Line,
    /// Half circle of radius 5 cm in the horizontal plane with a 0.3 rad
    /// twist about the vertical.
    Arc,
    /// The line with single-sample 1 m outliers on each side.
    Spike,
    /// A 5 mm step along +x after the first fifth of the trace.
    Step,
    /// Adversarial stream: outliers, non-finite poses, timestamp faults,
    /// stray buttons, wrench events and mode switches.
    Fuzz,
    /// Leader-follower: sinusoidal leader joint motion; the control pose is
    /// the leader's end-effector motion relative to its home pose.
    Wave,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Line,
        Scenario::Arc,
        Scenario::Spike,
        Scenario::Step,
        Scenario::Fuzz,
        Scenario::Wave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Line => "line",
            Scenario::Arc => "arc",
            Scenario::Spike => "spike",
            Scenario::Step => "step",
            Scenario::Fuzz => "fuzz",
            Scenario::Wave => "wave",
        }
    }

    pub fn default_ticks(self) -> usize {
        match self {
            Scenario::Fuzz => 5000,
            _ => 500,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?} (expected line, arc, spike, step, fuzz or wave)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub ticks: usize,
    /// Seed for the fuzz scenario; defaults to the config seed.
    pub seed: Option<u64>,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            ticks: scenario.default_ticks(),
            seed: None,
        }
    }
}

/// Length of the line scenario (m).
pub const LINE_LENGTH: f64 = 0.10;

fn origin(side: Side) -> Pose {
    let y = match side {
        Side::Left => 0.2,
        Side::Right => -0.2,
    };
    Pose::from_translation(0.35, y, 1.0)
}

/// Minimum-jerk profile on `[0, 1]`.
fn smooth(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn line_offset(k: usize, ticks: usize) -> f64 {
    let ramp = (ticks as f64 * 0.75).max(1.0);
    LINE_LENGTH * smooth(k as f64 / ramp)
}

fn shifted(side: Side, dx: Vector3<f64>) -> Pose {
    let o = origin(side);
    Pose::new(o.rotation, o.translation + dx)
}

pub fn generate(spec: &ScenarioSpec, config: &SessionConfig) -> Vec<TraceRecord> {
    let dt = config.dt();
    let n = spec.ticks;
    let mut out = Vec::with_capacity(2 * n + 1);
    match spec.scenario {
        Scenario::Line | Scenario::Spike | Scenario::Step => {
            for k in 1..=n {
                let t = k as f64 * dt;
                for side in Side::BOTH {
                    let dx = match spec.scenario {
                        Scenario::Step if k > n / 5 => 0.005,
                        Scenario::Step => 0.0,
                        _ => line_offset(k, n),
                    };
                    let mut pose = shifted(side, Vector3::new(dx, 0.0, 0.0));
                    let spike_at = match side {
                        Side::Left => n / 3,
                        Side::Right => 2 * n / 3,
                    };
                    if spec.scenario == Scenario::Spike && k == spike_at {
                        pose.translation.z += 1.0;
                    }
                    out.push(TraceRecord::Frame(TeleopFrame::new(t, side, &pose)));
                }
            }
        }
        Scenario::Arc => {
            for k in 1..=n {
                let t = k as f64 * dt;
                let s = smooth(k as f64 / (n as f64 * 0.75).max(1.0));
                let theta = PI * s;
                for side in Side::BOTH {
                    let sign = if side == Side::Left { 1.0 } else { -1.0 };
                    let r = 0.05;
                    let dx = Vector3::new(r * (1.0 - theta.cos()), sign * r * theta.sin(), 0.0);
                    let mut pose = shifted(side, dx);
                    pose.rotation = Pose::rot_z(sign * 0.3 * s).rotation * pose.rotation;
                    out.push(TraceRecord::Frame(TeleopFrame::new(t, side, &pose)));
                }
            }
        }
        Scenario::Wave => {
            out.push(TraceRecord::Mode {
                timestamp: dt,
                mode: TeleopMode::LeaderFollower,
            });
            for k in 1..=n {
                let t = k as f64 * dt;
                for side in Side::BOTH {
                    let i = side.index();
                    let chain = &config.chains[i];
                    let mut q = config.home[i].clone();
                    let phase = 2.0 * PI * 0.5 * (t - dt);
                    for (j, amp) in [(0usize, 0.15), (1, 0.1), (3, -0.12)] {
                        if j < q.len() {
                            q[j] += amp * phase.sin();
                        }
                    }
                    let (q, _) = chain.clamp_to_limits(&q).expect("home matches chain");
                    let home = chain.forward_kinematics(&config.home[i]).expect("home matches chain");
                    let pose = chain.forward_kinematics(&q).expect("home matches chain");
                    // leader motion in its own base frame, so the virtual base
                    // frame sits at the identity and retargeting reproduces
                    // the leader's end-effector pose
                    let motion = crate::geometry::compose(&pose, &crate::geometry::inverse(&home));
                    let mut f = TeleopFrame::new(t, side, &motion);
                    f.leader_joints = Some(q.to_vec());
                    out.push(TraceRecord::Frame(f));
                }
            }
        }
        Scenario::Fuzz => fuzz(&mut out, spec, config),
    }
    out
}

fn fuzz(out: &mut Vec<TraceRecord>, spec: &ScenarioSpec, config: &SessionConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(config.seed));
    let dt = config.dt();
    let mut t = 0.0;
    let mut poses = [origin(Side::Left), origin(Side::Right)];
    let mut mode = config.mode;
    for _ in 0..spec.ticks {
        let roll: f64 = rng.random();
        t += if roll < 0.04 {
            1e-7
        } else if roll < 0.07 {
            rng.random_range(0.2..1.0)
        } else if roll < 0.10 {
            dt * rng.random_range(0.5..1.5)
        } else {
            dt
        };

        if rng.random_bool(0.002) {
            mode = match mode {
                TeleopMode::Vr => TeleopMode::LeaderFollower,
                TeleopMode::LeaderFollower => TeleopMode::Vr,
            };
            out.push(TraceRecord::Mode { timestamp: t, mode });
        }
        if rng.random_bool(0.01) {
            let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
            let wrench = Wrench {
                force: Vector3::from_fn(|_, _| rng.random_range(-50.0..50.0)),
                torque: Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
            };
            out.push(TraceRecord::Wrench {
                timestamp: t,
                side,
                wrench,
            });
        }

        for side in Side::BOTH {
            let i = side.index();
            let speed = rng.random_range(0.0..0.004);
            let w = Twist::new(
                Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)),
                Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize() * speed,
            );
            let mut next = poses[i] * crate::geometry::exp(&w);
            // keep the walk inside a 40 cm box around its start
            let home = origin(side).translation;
            next.translation = home + (next.translation - home).map(|v| v.clamp(-0.2, 0.2));
            poses[i] = next;

            let mut f = TeleopFrame::new(t, side, &poses[i]);
            f.gripper = rng.random_range(0.0..1.0);
            let fault: f64 = rng.random();
            if fault < 0.03 {
                let axis = rng.random_range(0..3);
                f.position[axis] += rng.random_range(-2.0..2.0);
            } else if fault < 0.05 {
                let field = rng.random_range(0..8);
                let bad = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY][rng.random_range(0..3)];
                match field {
                    0..=2 => f.position[field] = bad,
                    3..=6 => f.orientation[field - 3] = bad,
                    _ => f.gripper = bad,
                }
            } else if fault < 0.06 {
                f.orientation = [0.0; 4];
            } else if fault < 0.07 {
                f.orientation = [1e200, 0.0, 0.0, 0.0];
            } else if fault < 0.08 {
                let angle = rng.random_range(0.5..3.0);
                let r = Pose::rot_x(angle).rotation * poses[i].rotation;
                f.orientation = Pose::from_rotation(r).quaternion_wxyz();
            } else if fault < 0.09 {
                f.gripper = rng.random_range(-5.0..5.0);
            }
            if rng.random_bool(0.01) {
                f.buttons |= BUTTON_CLUTCH;
            }
            if rng.random_bool(0.005) {
                f.buttons |= BUTTON_REANCHOR;
            }
            if mode == TeleopMode::LeaderFollower {
                let dof = config.chains[i].dof();
                let mut q: JointVector = config.home[i].clone();
                for v in q.iter_mut() {
                    *v += rng.random_range(-0.05..0.05);
                }
                let mut joints = q.to_vec();
                let j: f64 = rng.random();
                if j < 0.02 {
                    joints.truncate(dof.saturating_sub(2));
                } else if j < 0.04 {
                    joints[rng.random_range(0..dof)] = f64::NAN;
                } else if j < 0.07 {
                    joints[rng.random_range(0..dof)] += rng.random_range(-3.0..3.0);
                }
                f.leader_joints = Some(joints);
            }
            out.push(TraceRecord::Frame(f));
        }
    }
}
