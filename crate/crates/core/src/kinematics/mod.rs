//! Serial-chain model: forward kinematics, geometric Jacobian and the gravity
//! torque vector.
//!
//! Frame convention: joint `i` sits at `origin_i` in its parent frame and
//! rotates about `axis_i` expressed in its own frame. Link `i` is rigidly
//! attached to the frame after joint `i` rotates, and an optional tool
//! transform maps the last link frame to the end effector.

mod chain_file;

pub use chain_file::{parse_chain, write_chain, ChainFileError, DEFAULT_CHAIN, OFFSET6_CHAIN};

use crate::geometry::{self, Pose};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};
use thiserror::Error;

/// Standard gravity in the chain base frame.
pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
}

/// Joint angles (or increments) for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub DVector<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn from_element(n: usize, v: f64) -> Self {
        Self(DVector::from_element(n, v))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn ensure_len(&self, expected: usize) -> Result<(), KinematicsError> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(KinematicsError::DimensionMismatch {
                expected,
                got: self.len(),
            })
        }
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        Self(DVector::from_vec(v))
    }
}

impl From<DVector<f64>> for JointVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

impl Deref for JointVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
    pub velocity_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub axis: Vector3<f64>,
    pub origin: Pose,
    /// xyz/rpy the origin was built from, kept for lossless re-export.
    pub origin_xyz: [f64; 3],
    pub origin_rpy: [f64; 3],
    pub limits: JointLimits,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub mass: f64,
    pub com: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub name: String,
    pub joints: Vec<Joint>,
    pub links: Vec<Link>,
    pub tool: Pose,
    pub tool_xyz: [f64; 3],
    pub tool_rpy: [f64; 3],
}

/// World-frame data for every joint at one configuration.
struct JointFrames {
    /// Frame of each link (after the joint rotation).
    links: Vec<Pose>,
    /// Joint axis in the base frame.
    axes: Vec<Vector3<f64>>,
    /// Joint origin in the base frame.
    origins: Vec<Vector3<f64>>,
    end_effector: Pose,
}

impl KinematicChain {
    /// Validates and assembles a chain. Axes are renormalized only if they
    /// are already unit within 1e-9.
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        links: Vec<Link>,
        tool_xyz: [f64; 3],
        tool_rpy: [f64; 3],
    ) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidChain("chain has no joints".into()));
        }
        if links.len() != joints.len() {
            return Err(KinematicsError::InvalidChain(format!(
                "{} joints but {} links",
                joints.len(),
                links.len()
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::InvalidChain(format!("joint {} axis is not unit", i + 1)));
            }
            if !(j.limits.lower < j.limits.upper) {
                return Err(KinematicsError::InvalidChain(format!("joint {} has lower >= upper", i + 1)));
            }
            if !(j.limits.velocity_max > 0.0) {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {} velocity_max must be positive",
                    i + 1
                )));
            }
        }
        for (i, l) in links.iter().enumerate() {
            if !(l.mass >= 0.0) {
                return Err(KinematicsError::InvalidChain(format!("link {} has negative mass", i + 1)));
            }
        }
        Ok(Self {
            name: name.into(),
            joints,
            links,
            tool: Pose::from_xyz_rpy(tool_xyz, tool_rpy),
            tool_xyz,
            tool_rpy,
        })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn check(&self, q: &JointVector) -> Result<(), KinematicsError> {
        q.ensure_len(self.dof())
    }

    fn frames(&self, q: &JointVector) -> JointFrames {
        let n = self.dof();
        let mut links = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut t = Pose::identity();
        for (joint, &angle) in self.joints.iter().zip(q.iter()) {
            t = geometry::compose(&t, &joint.origin);
            axes.push(t.rotation * joint.axis);
            origins.push(t.translation);
            t = geometry::compose(&t, &Pose::from_rotation(geometry::rotation_about(&joint.axis, angle)));
            links.push(t);
        }
        let end_effector = geometry::compose(&t, &self.tool);
        JointFrames {
            links,
            axes,
            origins,
            end_effector,
        }
    }

    pub fn forward_kinematics(&self, q: &JointVector) -> Result<Pose, KinematicsError> {
        self.check(q)?;
        Ok(self.frames(q).end_effector)
    }

    /// Geometric Jacobian at the end-effector point, base frame, rows
    /// `(angular; linear)`.
    pub fn geometric_jacobian(&self, q: &JointVector) -> Result<DMatrix<f64>, KinematicsError> {
        self.check(q)?;
        let f = self.frames(q);
        Ok(point_jacobian(&f.axes, &f.origins, &f.end_effector.translation, self.dof()))
    }

    /// Jacobian mapping joint rates to the body twist of the end effector,
    /// the frame in which `log(T⁻¹·T_des)` is expressed.
    pub fn body_jacobian(&self, q: &JointVector) -> Result<DMatrix<f64>, KinematicsError> {
        self.check(q)?;
        let f = self.frames(q);
        let jac = point_jacobian(&f.axes, &f.origins, &f.end_effector.translation, self.dof());
        Ok(rotate_jacobian(&jac, &f.end_effector.rotation.transpose()))
    }

    /// Joint torques that hold the arm static against gravity `g`.
    ///
    /// This is `∂U/∂q` for the potential `U(q) = -Σ m·gᵀ·p_com(q)`, i.e. the
    /// negated generalized gravity force `Σ J_comᵀ·(m·g)`.
    pub fn gravity_torques(&self, q: &JointVector, g: &Vector3<f64>) -> Result<DVector<f64>, KinematicsError> {
        self.check(q)?;
        let f = self.frames(q);
        let n = self.dof();
        let mut tau = DVector::zeros(n);
        for (i, link) in self.links.iter().enumerate() {
            if link.mass == 0.0 {
                continue;
            }
            let p_com = f.links[i].transform_point(&link.com);
            let force = g * link.mass;
            // Only joints up to and including i move this link.
            for j in 0..=i {
                let lever = f.axes[j].cross(&(p_com - f.origins[j]));
                tau[j] -= lever.dot(&force);
            }
        }
        Ok(tau)
    }

    /// Clips every component into its joint range; returns the clipped
    /// vector and the indices that were moved.
    pub fn clamp_to_limits(&self, q: &JointVector) -> Result<(JointVector, Vec<usize>), KinematicsError> {
        self.check(q)?;
        let mut out = q.clone();
        let mut clipped = Vec::new();
        for (i, joint) in self.joints.iter().enumerate() {
            let v = out[i];
            let c = v.clamp(joint.limits.lower, joint.limits.upper);
            if c != v {
                out[i] = c;
                clipped.push(i);
            }
        }
        Ok((out, clipped))
    }

    pub fn lower_limits(&self) -> JointVector {
        JointVector::from(self.joints.iter().map(|j| j.limits.lower).collect::<Vec<_>>())
    }

    pub fn upper_limits(&self) -> JointVector {
        JointVector::from(self.joints.iter().map(|j| j.limits.upper).collect::<Vec<_>>())
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof()
            && self
                .joints
                .iter()
                .zip(q.iter())
                .all(|(j, &v)| v >= j.limits.lower && v <= j.limits.upper)
    }

    /// Center-of-mass positions in the base frame, one per link.
    pub fn com_positions(&self, q: &JointVector) -> Result<Vec<Vector3<f64>>, KinematicsError> {
        self.check(q)?;
        let f = self.frames(q);
        Ok(self
            .links
            .iter()
            .zip(f.links.iter())
            .map(|(l, frame)| frame.transform_point(&l.com))
            .collect())
    }
}

fn point_jacobian(axes: &[Vector3<f64>], origins: &[Vector3<f64>], point: &Vector3<f64>, n: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(6, n);
    for j in 0..n {
        let w = axes[j];
        let v = w.cross(&(point - origins[j]));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&w);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&v);
    }
    jac
}

/// Left-multiplies both 3-row blocks by `r`.
pub fn rotate_jacobian(jac: &DMatrix<f64>, r: &Matrix3<f64>) -> DMatrix<f64> {
    let mut out = jac.clone();
    for j in 0..jac.ncols() {
        let w: Vector3<f64> = jac.fixed_view::<3, 1>(0, j).into_owned();
        let v: Vector3<f64> = jac.fixed_view::<3, 1>(3, j).into_owned();
        out.fixed_view_mut::<3, 1>(0, j).copy_from(&(r * w));
        out.fixed_view_mut::<3, 1>(3, j).copy_from(&(r * v));
    }
    out
}

/// The chain shipped with the repository (representative 7-DoF geometry,
/// not calibrated against any real arm).
pub fn default_chain() -> KinematicChain {
    parse_chain(DEFAULT_CHAIN).expect("built-in chain parses")
}

/// A well-conditioned, elbow-bent configuration for [`default_chain`].
pub fn default_home() -> JointVector {
    JointVector::from_slice(&[0.0, -0.4, 0.0, 1.1, 0.0, 0.9, 0.0])
}
