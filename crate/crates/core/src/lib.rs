//! Exact oracles, explicit bounds and Monte Carlo checks for moderate
//! deviations of partial sums of stationary bounded sequences.

pub mod coupling;
pub mod error;
pub mod blocking;
pub mod bounds;
pub mod coefficients;
pub mod exact;
pub mod logspace;
pub mod models;
pub mod montecarlo;
pub mod normal;
pub mod seeding;

pub use error::{Error, Result};
