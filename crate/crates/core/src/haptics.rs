//! Current-based external torque estimation and the two feedback channels
//! derived from it.

use crate::kinematics::{JointVector, KinematicChain, KinematicsError};
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSample {
    /// Motor currents (A).
    pub currents: DVector<f64>,
    pub q: JointVector,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HapticOutput {
    /// Torque to render on the leader joints (N·m); empty in VR mode.
    pub kinesthetic_torque: Vec<f64>,
    /// Controller vibration intensity in `[0, 1]`.
    pub vibration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HapticParams {
    /// Motor torque constants (N·m/A), one per joint.
    pub kt: Vec<f64>,
    /// Torque norm that saturates the vibration channel (N·m).
    pub vibration_scale: f64,
    /// Low-pass time constant of the vibration channel (s); 0 disables it.
    pub vibration_tau: f64,
    pub kinesthetic_gain: f64,
    /// Per-joint clip of the kinesthetic torque (N·m).
    pub kinesthetic_cap: f64,
}

impl HapticParams {
    pub fn with_dof(dof: usize) -> Self {
        Self {
            kt: vec![1.0; dof],
            vibration_scale: 5.0,
            vibration_tau: 0.05,
            kinesthetic_gain: 1.0,
            kinesthetic_cap: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kt.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err("kt entries must be finite and > 0".into());
        }
        if !(self.vibration_scale > 0.0) {
            return Err("vibration_scale must be > 0".into());
        }
        if !(self.vibration_tau >= 0.0) {
            return Err("vibration_tau must be >= 0".into());
        }
        if !(self.kinesthetic_gain >= 0.0) {
            return Err("kinesthetic_gain must be >= 0".into());
        }
        if !(self.kinesthetic_cap > 0.0) {
            return Err("kinesthetic_cap must be > 0".into());
        }
        Ok(())
    }
}

/// `diag(kt)·i − τ_gravity(q)`.
pub fn estimate_external_torque(
    sample: &CurrentSample,
    chain: &KinematicChain,
    kt: &[f64],
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, KinematicsError> {
    let n = chain.dof();
    for len in [sample.currents.len(), kt.len()] {
        if len != n {
            return Err(KinematicsError::DimensionMismatch { expected: n, got: len });
        }
    }
    let motor = sample.currents.component_mul(&DVector::from_column_slice(kt));
    Ok(motor - chain.gravity_torques(&sample.q, gravity)?)
}

/// `min(1, ‖τ‖₂ / scale)` without smoothing.
pub fn vibration_intensity(tau_ext: &DVector<f64>, scale: f64) -> f64 {
    let v = tau_ext.norm() / scale;
    if v.is_nan() {
        0.0
    } else {
        v.min(1.0)
    }
}

/// First-order low-pass on the vibration intensity.
#[derive(Debug, Clone, Default)]
pub struct VibrationFilter {
    state: f64,
}

impl VibrationFilter {
    pub fn update(&mut self, raw: f64, dt: f64, tau: f64) -> f64 {
        if tau <= 0.0 {
            self.state = raw;
        } else {
            let a = 1.0 - (-dt / tau).exp();
            self.state += a * (raw - self.state);
        }
        self.state = self.state.clamp(0.0, 1.0);
        self.state
    }

    pub fn value(&self) -> f64 {
        self.state
    }
}

/// `gain·τ` clipped per joint to `±cap`.
pub fn kinesthetic_command(tau_ext: &DVector<f64>, gain: f64, cap: f64) -> DVector<f64> {
    tau_ext.map(|t| (gain * t).clamp(-cap, cap))
}
