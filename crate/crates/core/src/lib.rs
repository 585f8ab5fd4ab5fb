//! CVaR minimization by importance-sampling-weighted sample average
//! approximation inside a retrospective approximation loop.

pub mod config;
pub mod error;
pub mod experiments;
pub mod loss;
pub mod models;
pub mod objective;
pub mod ra;
pub mod rng;
pub mod solver;
pub mod special;
pub mod transform;

pub use error::{Error, Result};
