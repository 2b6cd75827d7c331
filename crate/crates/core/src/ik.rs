//! Per-arm regularized IK step.
//!
//! Each tick solves
//!
//! ```text
//! min ‖J·Δq − e‖² + ω_q·‖Δq − Δq_C‖² + μ²·‖Δq‖²
//! ```
//!
//! through its normal equations `(JᵀJ + (ω_q + μ²)·I)·Δq = Jᵀe + ω_q·Δq_C`,
//! which are SPD whenever `μ > 0`.

use crate::geometry::{self, GeometryError, Pose, Twist};
use crate::kinematics::JointVector;
use nalgebra::{DMatrix, DVector, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite input to the IK solve")]
    NonFiniteInput,
    #[error("invalid IK parameters: {0}")]
    InvalidParams(String),
    #[error("matrix is singular")]
    SingularMatrix,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkParams {
    /// Weight of the leader joint-matching term.
    pub omega_q: f64,
    /// Damping; must be strictly positive.
    pub mu: f64,
    /// Per-joint cap on one tick's increment (rad).
    pub max_step: f64,
    /// Scales the pose error into the per-tick twist target.
    pub tracking_gain: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            omega_q: 0.0,
            mu: 1e-2,
            max_step: 0.05,
            tracking_gain: 1.0,
        }
    }
}

impl IkParams {
    pub fn validate(&self) -> Result<(), IkError> {
        if !(self.omega_q >= 0.0 && self.omega_q.is_finite()) {
            return Err(IkError::InvalidParams("omega_q must be finite and >= 0".into()));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(IkError::InvalidParams("mu must be finite and > 0".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(IkError::InvalidParams("max_step must be > 0".into()));
        }
        if !(self.tracking_gain >= 0.0 && self.tracking_gain.is_finite()) {
            return Err(IkError::InvalidParams("tracking_gain must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    /// Increment after the per-joint cap.
    pub delta_q: JointVector,
    /// Increment before the cap (the exact minimizer).
    pub unclipped: JointVector,
    /// `‖J·Δq − e‖` for the capped increment.
    pub cart_residual: f64,
    /// Smallest singular value of `J`.
    pub condition_hint: f64,
    pub clipped: bool,
}

/// Body-frame twist taking `current` to `desired`.
pub fn cartesian_error(current: &Pose, desired: &Pose) -> Result<Twist, GeometryError> {
    geometry::log(&geometry::compose(&geometry::inverse(current), desired))
}

/// Caps every component at `±max_step`; returns whether anything moved.
pub fn clip_step(v: &mut DVector<f64>, max_step: f64) -> bool {
    let mut clipped = false;
    for x in v.iter_mut() {
        let c = x.clamp(-max_step, max_step);
        if c != *x {
            *x = c;
            clipped = true;
        }
    }
    clipped
}

pub fn solve_task_increment(
    jacobian: &DMatrix<f64>,
    error: &Twist,
    dq_c: &JointVector,
    params: &IkParams,
) -> Result<IkSolution, IkError> {
    params.validate()?;
    let k = jacobian.ncols();
    if jacobian.nrows() != 6 || dq_c.len() != k {
        return Err(IkError::DimensionMismatch(format!(
            "J is {}x{}, dq_c has {}",
            jacobian.nrows(),
            k,
            dq_c.len()
        )));
    }
    if !jacobian.iter().all(|v| v.is_finite()) || !error.is_finite() || !dq_c.is_finite() {
        return Err(IkError::NonFiniteInput);
    }
    let e: Vector6<f64> = error.to_vector() * params.tracking_gain;
    let e = DVector::from_column_slice(e.as_slice());
    let reg = params.omega_q + params.mu * params.mu;
    let mut normal = jacobian.transpose() * jacobian;
    for i in 0..k {
        normal[(i, i)] += reg;
    }
    let rhs = jacobian.transpose() * &e + &dq_c.0 * params.omega_q;
    let chol = normal.cholesky().ok_or(IkError::SingularMatrix)?;
    let unclipped = chol.solve(&rhs);
    let mut delta = unclipped.clone();
    let clipped = clip_step(&mut delta, params.max_step);
    let cart_residual = (jacobian * &delta - &e).norm();
    let condition_hint = jacobian.clone().svd(false, false).singular_values.min();
    Ok(IkSolution {
        delta_q: JointVector(delta),
        unclipped: JointVector(unclipped),
        cart_residual,
        condition_hint,
        clipped,
    })
}

/// `Jᵀ(JJᵀ + λ²I)⁻¹`; the Moore–Penrose pseudoinverse of a full-row-rank
/// `J` when `λ = 0`.
pub fn damped_pseudoinverse(jacobian: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, IkError> {
    let m = jacobian.nrows();
    let mut gram = jacobian * jacobian.transpose();
    for i in 0..m {
        gram[(i, i)] += lambda * lambda;
    }
    let chol = gram.cholesky().ok_or(IkError::SingularMatrix)?;
    let inv = chol.inverse();
    if !inv.iter().all(|v| v.is_finite()) {
        return Err(IkError::SingularMatrix);
    }
    Ok(jacobian.transpose() * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_twist(rng: &mut ChaCha8Rng, scale: f64) -> Twist {
        Twist::new(
            Vector3::from_fn(|_, _| rng.random_range(-scale..scale)),
            Vector3::from_fn(|_, _| rng.random_range(-scale..scale)),
        )
    }

    fn loose(omega_q: f64, mu: f64) -> IkParams {
        IkParams {
            omega_q,
            mu,
            max_step: 1e9,
            tracking_gain: 1.0,
        }
    }

    #[test]
    fn zero_target_gives_zero_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let j = random_matrix(&mut rng, 6, 7);
        let s = solve_task_increment(&j, &Twist::zero(), &JointVector::zeros(7), &IkParams::default()).unwrap();
        assert_eq!(s.delta_q, JointVector::zeros(7));
        assert!(!s.clipped);
    }

    #[test]
    fn padded_identity_scalar_oracle() {
        let mut j = DMatrix::zeros(6, 7);
        j.view_mut((0, 0), (6, 6)).fill_with_identity();
        let e = Twist::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(-0.4, 0.5, -0.6));
        let mu: f64 = 0.1;
        let s = solve_task_increment(&j, &e, &JointVector::zeros(7), &loose(0.0, mu)).unwrap();
        let ev = e.to_vector();
        for i in 0..6 {
            assert_abs_diff_eq!(s.delta_q[i], ev[i] / (1.0 + mu * mu), epsilon = 1e-15);
        }
        assert_eq!(s.delta_q[6], 0.0);
    }

    #[test]
    fn matches_stacked_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let j = random_matrix(&mut rng, 6, 7);
            let e = random_twist(&mut rng, 0.1);
            let dq_c = JointVector::from(DVector::from_fn(7, |_, _| rng.random_range(-0.1..0.1)));
            let (omega, mu) = (rng.random_range(0.0..2.0), rng.random_range(1e-3..0.5));
            let s = solve_task_increment(&j, &e, &dq_c, &loose(omega, mu)).unwrap();
            // [J; √ω I; μ I] Δq = [e; √ω dq_c; 0] via SVD least squares.
            let mut a = DMatrix::zeros(20, 7);
            a.view_mut((0, 0), (6, 7)).copy_from(&j);
            let mut b = DVector::zeros(20);
            b.rows_mut(0, 6).copy_from_slice(e.to_vector().as_slice());
            for i in 0..7 {
                a[(6 + i, i)] = omega.sqrt();
                a[(13 + i, i)] = mu;
                b[6 + i] = omega.sqrt() * dq_c[i];
            }
            let oracle = a.svd(true, true).solve(&b, 1e-14).unwrap();
            assert_abs_diff_eq!(s.delta_q.0, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = random_matrix(&mut rng, 6, 7);
        let e = random_twist(&mut rng, 5.0);
        let params = IkParams {
            max_step: 0.01,
            ..IkParams::default()
        };
        let s = solve_task_increment(&j, &e, &JointVector::zeros(7), &params).unwrap();
        assert!(s.clipped);
        assert!(s.delta_q.amax() <= 0.01);
    }

    #[test]
    fn rejects_bad_inputs() {
        let j = DMatrix::zeros(6, 7);
        assert!(matches!(
            solve_task_increment(&j, &Twist::zero(), &JointVector::zeros(6), &IkParams::default()),
            Err(IkError::DimensionMismatch(_))
        ));
        let e = Twist::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
        assert_eq!(
            solve_task_increment(&j, &e, &JointVector::zeros(7), &IkParams::default()),
            Err(IkError::NonFiniteInput)
        );
        let bad = IkParams {
            mu: 0.0,
            ..IkParams::default()
        };
        assert!(solve_task_increment(&j, &Twist::zero(), &JointVector::zeros(7), &bad).is_err());
    }

    #[test]
    fn cartesian_error_cases() {
        let p = Pose::from_xyz_rpy([0.3, 0.1, 0.5], [0.2, -0.4, 1.0]);
        assert_eq!(cartesian_error(&p, &p).unwrap().to_vector().amax(), 0.0);
        let shifted = p * Pose::from_translation(0.05, 0.0, 0.0);
        let e = cartesian_error(&p, &shifted).unwrap();
        assert_abs_diff_eq!(e.angular, Vector3::zeros(), epsilon = 1e-15);
        assert_abs_diff_eq!(e.linear, Vector3::new(0.05, 0.0, 0.0), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let d = p * geometry::exp(&random_twist(&mut rng, 0.3));
            let e = cartesian_error(&p, &d).unwrap();
            let back = p * geometry::exp(&e);
            assert_abs_diff_eq!(back.to_matrix(), d.to_matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn pseudoinverse_of_orthonormal_rows_is_transpose() {
        let mut j = DMatrix::zeros(6, 7);
        j.view_mut((0, 0), (6, 6)).fill_with_identity();
        assert_abs_diff_eq!(damped_pseudoinverse(&j, 0.0).unwrap(), j.transpose(), epsilon = 1e-15);
    }

    #[test]
    fn pseudoinverse_penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let j = random_matrix(&mut rng, 6, 7);
            let p = damped_pseudoinverse(&j, 0.0).unwrap();
            assert_abs_diff_eq!(&j * &p * &j, j.clone(), epsilon = 1e-8);
            assert_abs_diff_eq!(&p * &j * &p, p.clone(), epsilon = 1e-8);
            let jp = &j * &p;
            assert_abs_diff_eq!(jp.transpose(), jp, epsilon = 1e-8);
            let pj = &p * &j;
            assert_abs_diff_eq!(pj.transpose(), pj, epsilon = 1e-8);
        }
    }

    #[test]
    fn damped_pseudoinverse_stays_bounded_near_singularity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 6, 7);
        let svd = a.svd(true, true);
        let mut sigma = svd.singular_values.clone();
        sigma[5] = 1e-9;
        let j = svd.u.unwrap() * DMatrix::from_diagonal(&sigma) * svd.v_t.unwrap();
        let lambda = 1e-3;
        let p = damped_pseudoinverse(&j, lambda).unwrap();
        // Largest gain of σ/(σ²+λ²) is 1/(2λ); allow 1% numerical slack.
        let norm = p.svd(false, false).singular_values.max();
        assert!(norm <= 1.01 / (2.0 * lambda), "norm {norm}");
        assert_eq!(damped_pseudoinverse(&DMatrix::zeros(6, 7), 0.0), Err(IkError::SingularMatrix));
    }
}
