//! Rigid-body algebra on SE(3).
//!
//! Rotations are carried as 3×3 matrices throughout; unit quaternions (wxyz)
//! only appear at the file and wire boundary. Twists are ordered
//! `(angular; linear)`, which is also the row ordering of every Jacobian in
//! this crate.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Below this rotation angle the closed forms switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// `log` refuses rotations whose angle is at least `PI - NEAR_PI_MARGIN`.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    NearPiRotation { angle: f64 },
}

/// A rigid transform: `x ↦ rotation·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Tangent vector of SE(3), angular part first.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_rotation(rotation_about(&Vector3::x(), angle))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_rotation(rotation_about(&Vector3::y(), angle))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(rotation_about(&Vector3::z(), angle))
    }

    /// Fixed-axis roll/pitch/yaw: `Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let r = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Self::new(*r.matrix(), Vector3::from(xyz))
    }

    /// Builds a pose from a translation and a (not necessarily normalized)
    /// wxyz quaternion.
    pub fn from_xyz_quat(xyz: [f64; 3], wxyz: [f64; 4]) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]));
        Self::new(*q.to_rotation_matrix().matrix(), Vector3::from(xyz))
    }

    /// Unit quaternion of the rotation block, wxyz, with `w >= 0`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        if w < 0.0 {
            [-w, -x, -y, -z]
        } else {
            [w, x, y, z]
        }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Maximum deviation of `rotationᵀ·rotation` from identity, and of the
    /// determinant from +1.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        gram.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        compose(&self, &rhs)
    }
}

impl Twist {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.angular.x,
            self.angular.y,
            self.angular.z,
            self.linear.x,
            self.linear.y,
            self.linear.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.angular * s, self.linear * s)
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|v| v.is_finite())
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(a.rotation * b.rotation, a.rotation * b.translation + a.translation)
}

pub fn inverse(p: &Pose) -> Pose {
    let rt = p.rotation.transpose();
    Pose::new(rt, -(rt * p.translation))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues rotation about a unit axis.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = vee(&(r - r.transpose())).norm() * 0.5;
    let c = (r.trace() - 1.0) * 0.5;
    s.atan2(c)
}

/// SO(3) exponential with the `sin θ/θ` and `(1-cos θ)/θ²` coefficients.
fn so3_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        let half = (0.5 * theta).sin();
        let a = theta.sin() / theta;
        let b = 2.0 * half * half / t2;
        let c = (theta - theta.sin()) / (t2 * theta);
        (a, b, c)
    }
}

/// Matrix exponential of a twist.
pub fn exp(t: &Twist) -> Pose {
    let theta = t.angular.norm();
    let w = skew(&t.angular);
    let w2 = w * w;
    let (a, b, c) = so3_coefficients(theta);
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let v = Matrix3::identity() + w * b + w2 * c;
    Pose::new(rotation, v * t.linear)
}

/// Logarithm of a pose, valid for rotation angles below `π - 1e-6`.
pub fn log(p: &Pose) -> Result<Twist, GeometryError> {
    let r = &p.rotation;
    let theta = rotation_angle(r);
    if theta >= PI - NEAR_PI_MARGIN {
        return Err(GeometryError::NearPiRotation { angle: theta });
    }
    let axis_sin = vee(&(r - r.transpose())) * 0.5;
    let angular = if theta < SMALL_ANGLE {
        // sinθ/θ ≈ 1 - θ²/6
        axis_sin * (1.0 + theta * theta / 6.0)
    } else {
        axis_sin * (theta / theta.sin())
    };
    let w = skew(&angular);
    // V⁻¹ = I - ½W + γ W², γ = (1 - θ sinθ / (2(1 - cosθ))) / θ²
    let gamma = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w * w * gamma;
    Ok(Twist::new(angular, v_inv * p.translation))
}

/// Shortest-arc interpolation from `a` toward `b` by fraction `s` in `[0, 1]`.
pub fn slerp_rotation(a: &Matrix3<f64>, b: &Matrix3<f64>, s: f64) -> Matrix3<f64> {
    let rel = a.transpose() * b;
    let theta = rotation_angle(&rel);
    if theta < SMALL_ANGLE {
        return *a;
    }
    let axis_sin = vee(&(rel - rel.transpose())) * 0.5;
    let axis = if theta < PI - NEAR_PI_MARGIN {
        axis_sin / theta.sin()
    } else {
        // Near π the antisymmetric part vanishes; recover the axis from the
        // symmetric part instead.
        let sym = (rel + Matrix3::identity()) * 0.5;
        let col = (0..3)
            .map(|i| sym.column(i).into_owned())
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .unwrap_or_else(Vector3::x);
        col.normalize()
    };
    a * rotation_about(&axis.normalize(), theta * s)
}

/// Angle of the relative rotation between two rotation matrices.
pub fn rotation_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

/// Re-orthonormalizes a nearly orthonormal matrix through its quaternion.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    *UnitQuaternion::from_matrix(r).to_rotation_matrix().matrix()
}
