use super::TeleopFrame;
use crate::geometry::{self, Pose};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Exponential smoothing factor in (0, 1]; 1 disables smoothing.
    pub alpha: f64,
    /// Translation speed above which a sample counts as a spike (m/s).
    pub v_max: f64,
    /// Rotation speed above which a sample counts as a spike (rad/s).
    pub omega_max: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            v_max: 2.0,
            omega_max: 6.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Rejection {
    #[error("non-finite sample")]
    NonFinite,
    #[error("timestamp does not advance (dt = {dt})")]
    Timestamp { dt: f64 },
    #[error("translation jump {jump} m exceeds {limit} m")]
    TranslationJump { jump: f64, limit: f64 },
    #[error("rotation jump {jump} rad exceeds {limit} rad")]
    RotationJump { jump: f64, limit: f64 },
}

#[derive(Debug, Clone)]
struct FilterMemory {
    timestamp: f64,
    raw_position: Vector3<f64>,
    raw_rotation: Matrix3<f64>,
    position: Vector3<f64>,
    rotation: Matrix3<f64>,
}

/// Causal spike filter and smoother for one side's pose stream.
///
/// Each sample is gated against the last accepted raw sample: a translation
/// jump above `v_max·dt` or a rotation jump above `omega_max·dt` is dropped
/// and the previous output is held. Accepted samples are smoothed
/// (exponential on translation, slerp on rotation) and the smoothed step is
/// itself capped at `v_max·dt` / `omega_max·dt`.
#[derive(Debug, Clone)]
pub struct InputFilter {
    pub params: FilterParams,
    memory: Option<FilterMemory>,
}

impl InputFilter {
    pub fn new(params: FilterParams) -> Self {
        Self { params, memory: None }
    }

    pub fn reset(&mut self) {
        self.memory = None;
    }

    /// Last filtered pose, if any sample has been accepted.
    pub fn current(&self) -> Option<Pose> {
        self.memory.as_ref().map(|m| Pose::new(m.rotation, m.position))
    }

    pub fn filter(&mut self, frame: &TeleopFrame) -> Result<TeleopFrame, Rejection> {
        if !frame.is_finite() {
            return Err(Rejection::NonFinite);
        }
        let raw = frame.control_pose();
        let Some(mem) = self.memory.as_mut() else {
            self.memory = Some(FilterMemory {
                timestamp: frame.timestamp,
                raw_position: raw.translation,
                raw_rotation: raw.rotation,
                position: raw.translation,
                rotation: raw.rotation,
            });
            return Ok(frame.clone());
        };
        let dt = frame.timestamp - mem.timestamp;
        if !(dt > 0.0) {
            return Err(Rejection::Timestamp { dt });
        }
        let p = &self.params;
        let lin_limit = p.v_max * dt;
        let rot_limit = p.omega_max * dt;
        let jump = (raw.translation - mem.raw_position).norm();
        if jump > lin_limit {
            return Err(Rejection::TranslationJump { jump, limit: lin_limit });
        }
        let rjump = geometry::rotation_distance(&mem.raw_rotation, &raw.rotation);
        if rjump > rot_limit {
            return Err(Rejection::RotationJump { jump: rjump, limit: rot_limit });
        }

        let mut step = (raw.translation - mem.position) * p.alpha;
        let step_norm = step.norm();
        if step_norm > lin_limit {
            step *= lin_limit / step_norm;
        }
        let position = mem.position + step;

        let mut rotation = geometry::slerp_rotation(&mem.rotation, &raw.rotation, p.alpha);
        let turned = geometry::rotation_distance(&mem.rotation, &rotation);
        if turned > rot_limit {
            rotation = geometry::slerp_rotation(&mem.rotation, &rotation, rot_limit / turned);
        }

        *mem = FilterMemory {
            timestamp: frame.timestamp,
            raw_position: raw.translation,
            raw_rotation: raw.rotation,
            position,
            rotation,
        };
        let mut out = frame.clone();
        let filtered = Pose::new(rotation, position);
        out.position = filtered.xyz();
        out.orientation = filtered.quaternion_wxyz();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input::Side;
    use proptest::prelude::*;

    fn frame(t: f64, x: f64) -> TeleopFrame {
        TeleopFrame::new(t, Side::Left, &Pose::from_translation(x, 0.2, 0.3))
    }

    #[test]
    fn constant_stream_is_unchanged() {
        let mut f = InputFilter::new(FilterParams::default());
        for i in 0..50 {
            let out = f.filter(&frame(i as f64 * 1e-3, 0.5)).unwrap();
            assert!((out.position[0] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn one_metre_spike_is_dropped() {
        let mut f = InputFilter::new(FilterParams::default());
        for i in 0..10 {
            f.filter(&frame(i as f64 * 1e-3, 0.5)).unwrap();
        }
        let before = f.current().unwrap();
        assert!(matches!(f.filter(&frame(0.010, 1.5)), Err(Rejection::TranslationJump { .. })));
        assert_eq!(f.current().unwrap(), before);
        let out = f.filter(&frame(0.011, 0.5)).unwrap();
        assert!((out.position[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn step_settles_geometrically() {
        // 1 mm step at 1 kHz stays under the 2 mm gate; error decays as 0.7^n.
        let mut f = InputFilter::new(FilterParams::default());
        f.filter(&frame(0.0, 0.0)).unwrap();
        let step = 1e-3;
        let mut errors = Vec::new();
        for n in 1..=13 {
            let out = f.filter(&frame(n as f64 * 1e-3, step)).unwrap();
            errors.push((step - out.position[0]).abs() / step);
        }
        // ln(0.01)/ln(0.7) = 12.91: still above 1% after 12 samples, below after 13.
        assert!(errors[11] > 0.01);
        assert!(errors[12] < 0.01);
        assert!((errors[12] - 0.7f64.powi(13)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_and_stale_samples_rejected() {
        let mut f = InputFilter::new(FilterParams::default());
        f.filter(&frame(0.0, 0.0)).unwrap();
        let mut bad = frame(0.001, 0.0);
        bad.position[1] = f64::NAN;
        assert_eq!(f.filter(&bad), Err(Rejection::NonFinite));
        assert!(matches!(f.filter(&frame(0.0, 0.0)), Err(Rejection::Timestamp { .. })));
        let mut zero_quat = frame(0.002, 0.0);
        zero_quat.orientation = [0.0; 4];
        assert_eq!(f.filter(&zero_quat), Err(Rejection::NonFinite));
    }

    proptest! {
        #[test]
        fn filtered_steps_respect_speed_bound(
            xs in proptest::collection::vec(-0.05f64..0.05, 1..200),
            dts in proptest::collection::vec(1e-6f64..0.02, 200),
        ) {
            let params = FilterParams::default();
            let mut f = InputFilter::new(params);
            let mut t = 0.0;
            let mut x = 0.0;
            let mut last: Option<(f64, Vector3<f64>)> = None;
            for (dx, dt) in xs.iter().zip(&dts) {
                t += dt;
                x += dx;
                if let Ok(out) = f.filter(&frame(t, x)) {
                    let p = Vector3::from(out.position);
                    if let Some((t0, p0)) = last {
                        prop_assert!((p - p0).norm() <= params.v_max * (t - t0) + 1e-12);
                    }
                    last = Some((t, p));
                }
            }
        }

        #[test]
        fn filter_is_deterministic(xs in proptest::collection::vec(-0.01f64..0.01, 1..100)) {
            let run = || {
                let mut f = InputFilter::new(FilterParams::default());
                xs.iter()
                    .enumerate()
                    .map(|(i, x)| f.filter(&frame(i as f64 * 4e-3, *x)).map(|o| o.position))
                    .collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
