//! Stochastic run dynamics for one-day cricket.
//!
//! The crate is organised bottom-up:
//!
//! * [`montecarlo`] deterministic seeding, the parallel executor and ensemble statistics.
//! * [`model`] player profiles, match configuration and the discounted-scoring objective.
//! * [`environment`] pressure, attendance, day/day-night and weather terms composing σ₁.
//! * [`bowler`] payoff mixture, von Koch snowflake area, Loewner-type evolution and the
//!   closed-form characteristic function that yields σ₂*.
//! * [`dynamics`] generator, log-generator, drift composition, Euler–Maruyama ensembles and
//!   Dynkin / martingale checks.
//! * [`pathintegral`] the discretised transition kernel, the Laplace step and the optimal
//!   valuation coefficient β*.
//! * [`rain`] stopping overs, gauges and gauge integrals, the Gaussian free field, the
//!   Liouville drift and the post-rain β*.
//!
//! All numerical types are plain `f64`; vectors are indexed by player.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bowler;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod pathintegral;
pub mod quadrature;
pub mod rain;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
