//! Bimanual teleoperation core: rigid-body math, kinematics, operator input
//! handling, the per-arm control stages and a kinematic simulator.

// `!(x > 0.0)` is how parameter checks reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod coordination;
pub mod geometry;
pub mod haptics;
pub mod ik;
pub mod input;
pub mod kinematics;
pub mod protocol;
pub mod safety;
pub mod session;
pub mod simulator;
