//! First-order kinematic dual-arm simulator.
//!
//! Joint velocities come from a PD tracking law on the commanded positions
//! and are integrated explicitly; joint currents are synthesized from
//! statics (gravity plus any injected tip wrench) so the haptics pipeline
//! has something physical to estimate.

use crate::haptics::CurrentSample;
use crate::input::Side;
use crate::kinematics::{JointVector, KinematicChain, KinematicsError};
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

/// Force and moment applied at the end-effector point, base frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|v| v.is_finite())
    }

    /// Stacked to match Jacobian rows: `(torque; force)`.
    pub fn to_jacobian_order(&self) -> DVector<f64> {
        DVector::from_column_slice(&[
            self.torque.x,
            self.torque.y,
            self.torque.z,
            self.force.x,
            self.force.y,
            self.force.z,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    /// Proportional gain (1/s).
    pub kp: Vec<f64>,
    /// Velocity feedback (unitless).
    pub kd: Vec<f64>,
    /// Per-joint velocity cap (rad/s).
    pub velocity_cap: Vec<f64>,
}

impl PdGains {
    pub fn uniform(dof: usize, kp: f64, kd: f64, cap: f64) -> Self {
        Self {
            kp: vec![kp; dof],
            kd: vec![kd; dof],
            velocity_cap: vec![cap; dof],
        }
    }

    pub fn validate(&self, dof: usize) -> Result<(), String> {
        if self.kp.len() != dof || self.kd.len() != dof || self.velocity_cap.len() != dof {
            return Err(format!("PD gains must have {dof} entries"));
        }
        if self.kp.iter().chain(&self.kd).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err("kp and kd must be finite and >= 0".into());
        }
        if self.velocity_cap.iter().any(|v| !(*v > 0.0)) {
            return Err("velocity caps must be > 0".into());
        }
        Ok(())
    }
}

impl Default for PdGains {
    fn default() -> Self {
        Self::uniform(7, 20.0, 0.1, 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: JointVector,
    pub qd: DVector<f64>,
    pub wrench: Wrench,
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub arms: [ArmState; 2],
    pub tick: u64,
}

impl SimState {
    pub fn new(q_left: JointVector, q_right: JointVector) -> Self {
        let arm = |q: JointVector| ArmState {
            qd: DVector::zeros(q.len()),
            q,
            wrench: Wrench::zero(),
            gripper: 0.0,
        };
        Self {
            arms: [arm(q_left), arm(q_right)],
            tick: 0,
        }
    }

    pub fn arm(&self, side: Side) -> &ArmState {
        &self.arms[side.index()]
    }

    /// Sets the persistent tip wrench of one arm. Non-finite wrenches are
    /// ignored.
    pub fn inject_wrench(&mut self, side: Side, wrench: Wrench) {
        if wrench.is_finite() {
            self.arms[side.index()].wrench = wrench;
        }
    }
}

/// `kp⊙(q_cmd − q) − kd⊙qd`, clipped to the velocity caps.
pub fn pd_velocity(
    q_cmd: &JointVector,
    q_now: &JointVector,
    qd_now: &DVector<f64>,
    gains: &PdGains,
) -> Result<DVector<f64>, KinematicsError> {
    let n = q_now.len();
    for len in [q_cmd.len(), qd_now.len(), gains.kp.len(), gains.kd.len(), gains.velocity_cap.len()] {
        if len != n {
            return Err(KinematicsError::DimensionMismatch { expected: n, got: len });
        }
    }
    Ok(DVector::from_fn(n, |i, _| {
        let v = gains.kp[i] * (q_cmd[i] - q_now[i]) - gains.kd[i] * qd_now[i];
        v.clamp(-gains.velocity_cap[i], gains.velocity_cap[i])
    }))
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub chains: [KinematicChain; 2],
    pub gains: [PdGains; 2],
    pub gravity: Vector3<f64>,
}

impl Simulator {
    pub fn chain(&self, side: Side) -> &KinematicChain {
        &self.chains[side.index()]
    }

    /// Advances one tick. Commands are assumed watchdog-approved.
    pub fn step(&self, state: &SimState, cmd_left: &JointVector, cmd_right: &JointVector, dt: f64) -> Result<SimState, KinematicsError> {
        let mut next = state.clone();
        for (i, cmd) in [cmd_left, cmd_right].into_iter().enumerate() {
            let arm = &mut next.arms[i];
            let v = pd_velocity(cmd, &arm.q, &arm.qd, &self.gains[i])?;
            let integrated = JointVector(&arm.q.0 + &v * dt);
            let (clamped, _) = self.chains[i].clamp_to_limits(&integrated)?;
            arm.q = clamped;
            arm.qd = v;
        }
        next.tick += 1;
        Ok(next)
    }

    /// Currents a motor with constants `kt` would draw holding the arm
    /// static against gravity and the injected wrench:
    /// `diag(kt)⁻¹·(τ_gravity + Jᵀ·w)`.
    pub fn synthesize_currents(&self, state: &SimState, side: Side, kt: &[f64]) -> Result<CurrentSample, KinematicsError> {
        let chain = self.chain(side);
        let arm = state.arm(side);
        if kt.len() != chain.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: chain.dof(),
                got: kt.len(),
            });
        }
        let mut torque = chain.gravity_torques(&arm.q, &self.gravity)?;
        if arm.wrench != Wrench::zero() {
            let jac = chain.geometric_jacobian(&arm.q)?;
            torque += jac.transpose() * arm.wrench.to_jacobian_order();
        }
        Ok(CurrentSample {
            currents: torque.component_div(&DVector::from_column_slice(kt)),
            q: arm.q.clone(),
            timestamp: state.tick as f64,
        })
    }
}
