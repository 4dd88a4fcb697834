//! Stochastic approximation for root finding on grid-discretized Banach
//! function spaces.
//!
//! Elements of `C([0,1]; R^d)` and `L^p([0,1]; R^d)` are represented by
//! their values on a uniform grid ([`space::GridFunction`]). Root problems
//! `G(x*) = 0` ([`operators::RootProblem`]) are solved by the recursions in
//! [`sa`], driven by the noise models in [`noise`] and step sizes in
//! [`schedule`]. [`diagnostics`] measures what the runs produce.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod noise;
pub mod operators;
pub mod rng;
pub mod sa;
pub mod schedule;
pub mod series;
pub mod space;

pub use error::{NoiseError, OperatorError, ScheduleError, SpaceError};
pub use noise::{NoiseKind, NoiseModel, ScaleRule};
pub use operators::{MonotoneBounds, RootProblem};
pub use schedule::StepSchedule;
pub use space::{GridFunction, NormKind, SpaceDescriptor};

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
