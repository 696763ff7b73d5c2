//! Expected number of V-tangent nodal points of random spherical harmonics.
//!
//! A V-tangent nodal point of an eigenfunction `f` on the round sphere is a
//! point where `f = 0` and the vector field `V` is tangent to the nodal line,
//! i.e. `Vf = 0`. This crate computes the expected number of such points for
//! the Gaussian ensemble of degree-`l` spherical harmonics in two independent
//! ways:
//!
//! * analytically, by integrating the Kac-Rice first intensity built from the
//!   explicit covariance of `(f, Vf, V⊥f, VVf)` ([`kac_rice`]);
//! * empirically, by sampling harmonics and counting the points with grid
//!   seeded Newton refinement ([`nodal`], [`experiment`]).
//!
//! The modules are layered bottom-up: [`legendre`] → [`geometry`] →
//! [`ensemble`] → [`covariance`] → [`kac_rice`] / [`nodal`] → [`experiment`].

pub mod cli;
pub mod covariance;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod kac_rice;
pub mod legendre;
pub mod nodal;
pub mod quadrature;

pub use error::{Error, Result};

/// The leading coefficient `√2 / (4π²)` of the degree-squared asymptotic.
pub const LEADING_CONSTANT: f64 = std::f64::consts::SQRT_2 / (4.0 * std::f64::consts::PI * std::f64::consts::PI);

/// `√2/(4π²) · l²`.
pub fn leading_term(l: usize) -> f64 {
    LEADING_CONSTANT * (l * l) as f64
}
