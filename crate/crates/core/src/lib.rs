//! Dynamic network loading for networks with affine arc delays.
//!
//! The crate computes the time evolution of arc volumes induced by path
//! departure rates (dynamic network loading), the resulting path travel
//! times and schedule-penalized effective delays, and route-and-departure
//! dynamic user equilibria via fixed-point projection. A companion
//! harness measures how the effective delay operator responds to
//! converging sequences of path flows.
//!
//! All curves are piecewise linear and all integrals are evaluated in
//! closed form per piece, so the loader introduces no quadrature error.

pub mod continuity;
pub mod delay;
pub mod due;
pub mod error;
pub mod flow;
pub mod loader;
pub mod net;
pub mod rng;
pub mod testing;

pub use error::{Error, Result};
