//! Dynamical-systems-reconstruction toolkit.
//!
//! Trains recurrent networks on chaotic time series using sparsely forced
//! backpropagation through time, with the forcing interval derived from the
//! data's maximal Lyapunov exponent, and provides the diagnostics linking
//! Jacobian products, Lyapunov exponents, and gradient explosion/decay.

pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod metrics;
pub mod models;
pub mod systems;
pub mod training;

pub use error::{Error, Result};
pub use systems::Trajectory;
