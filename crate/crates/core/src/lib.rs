//! Low-thrust collision-avoidance maneuver planning through a moment-matrix
//! semidefinite relaxation, with the conic interior-point solver it runs on.

// `!(x > 0.0)` is how NaN gets rejected; index loops read better in the kernels
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod cdm;
pub mod conic;
pub mod conjunction;
pub mod dynamics;
pub mod relaxation;
pub mod scenario;
