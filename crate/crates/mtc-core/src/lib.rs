//! Active mass-transport cloaking planner.
//!
//! A team of mobile robots rides a fixed closed curve around a safe zone
//! and releases (or absorbs) a chemical so that the concentration inside
//! the zone tracks a desired level while an external release spreads
//! through the domain under advection and diffusion. The planner trains a
//! small neural field against the weak (variational) form of the transport
//! equation jointly with the robots' release-rate and path coefficients,
//! and replays the optimized controls with an independent explicit
//! finite-difference solver to verify the cloak.
//!
//! Modules:
//! - [`scenario`]: domain geometry, transport fields, boundary data, the
//!   safe zone and the constraint curve, plus the built-in benchmark.
//! - [`net`]: the field approximator with analytic input derivatives and
//!   exact parameter gradients of derivative-dependent scalars.
//! - [`weakform`]: hat test functions, Gauss-Legendre quadrature, and the
//!   variational residual.
//! - [`control`]: release-rate/path parameterizations and the induced
//!   Gaussian source field.
//! - [`grid`]: training point lattices.
//! - [`trainer`]: loss/objective assembly and the optimizer loop.
//! - [`validate`]: the finite-difference replay and cloaking report.
//! - [`gradcheck`]: finite-difference oracles for every analytic gradient.

pub mod control;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod grid;
pub mod net;
pub mod scenario;
pub mod trainer;
pub mod validate;
pub mod weakform;

pub use error::{Error, Result};
