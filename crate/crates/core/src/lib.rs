//! Numerical laboratory for the N-bank lending game with delayed repayment.
//!
//! The crate solves the no-delay Riccati benchmark, the closed-loop kernel
//! system for the delayed game, the open-loop forward/anticipated-backward
//! system by regression Monte Carlo, and simulates the resulting equilibria.

// negated comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod ekernels;
pub mod error;
pub mod fabsde;
pub mod grid;
pub mod liquidity;
pub mod model;
pub mod nashgap;
pub mod params;
pub mod report;
pub mod riccati;
pub mod regression;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{GameError, Result};
pub use grid::TimeGrid;
pub use params::{DelayAtom, DelayMeasure, GameParams, SystemicRiskQuery};
