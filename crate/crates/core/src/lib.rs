//! Open-loop transmission-rate scheduling for continuous-discrete Kalman
//! filtering with Poisson measurement arrivals.
//!
//! Schedules are designed by optimizing a deterministic information-form
//! surrogate of the filter's covariance dynamics, and certified with a
//! two-sided bound: the information-form surrogate cost is a lower bound and
//! the covariance-form surrogate cost an upper bound on the expected cost of
//! the exact filter, checked against Monte Carlo rollouts.

pub mod bounds;
pub mod cdkf;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod optimize;
pub mod riccati;
pub mod surrogate;

pub use error::{Error, Result};
pub use model::{Instance, ResourcePolytope, Schedule, Sensor, SystemModel, WeightSpec};
pub use surrogate::SurrogateKind;
