//! Thermal radiative transfer in 1D slab geometry.
//!
//! The crate solves the multigroup, discrete-ordinates radiation transport
//! equation coupled to a material energy balance, using a semi-implicit
//! (backward Euler) step with opacities frozen at the beginning-of-step
//! temperature. Three iteration schemes are provided:
//!
//! * `consistent`: second-moment acceleration with a gray low-order system
//!   whose LDG discretization carries correction sources built so that the
//!   low-order solution reproduces the discrete moments of the transport
//!   solution at convergence,
//! * `independent`: the same low-order system with a reduced, independently
//!   discretized set of closures,
//! * `unaccelerated`: plain source iteration between transport sweeps and a
//!   pointwise material energy update.
//!
//! Units: cm, ns, eV, erg (radiation constant `a` in erg/cm^3/eV^4).

pub mod bench;
pub mod cli;
pub mod config;
pub mod driver;
pub mod error;
pub mod fem1d;
pub mod low_order;
pub mod opacity;
pub mod output;
pub mod quadrature;
pub mod solver;
pub mod spectral;
pub mod transport;

pub use error::{Error, Result};
