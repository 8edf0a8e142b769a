//! Numerical laboratory for finite-state Markov jump processes: occupation-time
//! large deviations, excess dynamical activity, its evolution under the Master
//! equation, and normal-linear-response sector conditions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod functionals;
pub mod linalg;
pub mod markov;
pub mod potential;
pub mod evolution;
pub mod response;
pub mod sampling;
pub mod model_io;

pub use config::Tolerances;
pub use error::{Error, Result};
pub use markov::{Distribution, Generator, GeneratorKind, Observable, RateModel};
pub use potential::{Potential, TiltedModel};
