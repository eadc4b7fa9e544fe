//! Traveling thief problem toolkit.
//!
//! A TTP instance couples a TSP tour with a knapsack: a thief visits every
//! city exactly once, picks up items along the way, and slows down as the
//! knapsack fills. The objective is collected profit minus renting cost for
//! the travel time. This crate provides instance parsing and generation,
//! exact and heuristic knapsack solvers, tour construction, the objective
//! function, packing heuristics driven by fitted parameter models, and the
//! evolutionary machinery (packing EA, weight-vector EA, symbolic
//! regression) used to fit those models.

pub mod baselines;
pub mod error;
pub mod evolution;
pub mod features;
pub mod heuristics;
pub mod instance;
pub mod knapsack;
pub mod objective;
pub mod sr;
pub mod tour;

pub use error::{Result, TtpError};
