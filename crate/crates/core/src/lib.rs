//! Numerical library for equilibria of density-constrained differential
//! market games.
//!
//! The space of strategies is the set of probability densities on an interval
//! [a,b], discretized as a weighted quadrature grid. Markets interact through
//! bounded linear operators; demand follows a linear operator ODE driven by
//! the densities, and payoffs are linear-quadratic in the density profile.
//! Eliminating the demand trajectory through a backward operator equation
//! turns both equilibrium notions into a variational inequality V = Pu + Q
//! over the product density set, solved by a projected fixed-point iteration
//! whose projection reduces to a per-market scalar multiplier equation.
//!
//! Modules:
//! - [`function_space`]: grids, grid functions, weighted inner products.
//! - [`operators`]: structural linear operators, adjoints, spectral bounds.
//! - [`dynamics`]: forward state solve, backward operator equation, value
//!   functions along both assembly paths.
//! - [`vi_assembly`]: (P, Q) assembly, spectral certificate, market regime
//!   classification.
//! - [`density_projection`]: weighted projection onto the density sets.
//! - [`equilibrium`]: the projected fixed-point solvers and verification.
//! - [`stability`]: perturbation schedules and stability reports.
//! - [`scenario`]: JSON scenario configs and the builtin registry.

pub mod density_projection;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod function_space;
pub mod operators;
pub mod scenario;
pub mod stability;
pub mod vi_assembly;

pub use error::{Error, Mode, Result};
