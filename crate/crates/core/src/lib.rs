//! Branching random walks in an i.i.d. time-random environment.
//!
//! The crate simulates the quenched particle system, computes the additive
//! martingale `W_n` together with the correction martingales `N_{1,n}`,
//! `N_{2,n}`, `N_{3,n}`, and evaluates the Edgeworth-type expansions of the
//! normalized counting measure `Z_n(ℓ_n + s_n t) / Π_n` up to third order.
//!
//! Module map:
//!
//! * [`special`]: Chebyshev–Hermite polynomials, the standard normal density and CDF.
//! * [`environment`]: offspring and moving laws, environment mixtures, realized environments.
//! * [`edgeworth`]: cumulant windows, correction polynomials `Q_ν`, Edgeworth CDFs and oracles.
//! * [`simulator`]: the genealogical tree with positions.
//! * [`martingales`]: martingale series, truncations, limit estimates and diagnostics.
//! * [`expansion`]: right-hand sides of the expansions, residual studies, the A/B decomposition.

pub mod edgeworth;
pub mod environment;
mod error;
pub mod expansion;
pub mod martingales;
pub mod rng;
pub mod simulator;
pub mod special;
pub mod stats;
pub mod summation;

pub use error::{Error, Result};
