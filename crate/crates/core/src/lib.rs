//! Numerical laboratory for fast-slow partially hyperbolic maps of the two-torus
//!
//! `F_ε(x,θ) = (f(x,θ), θ + εω(x,θ)) mod 1`
//!
//! with an expanding fibre map `f` and a slow drift `ω`, both trigonometric
//! polynomials. The crate computes invariant fibre densities, the averaged drift,
//! centre slope fields and expansion factors, standard pairs and patches with
//! their pushforwards, and Monte-Carlo statistics of the physical measure.

pub mod averaging;
pub mod chebyshev;
pub mod cli;
pub mod cohomology;
pub mod cones;
pub mod config;
pub mod constants;
pub mod error;
pub mod pairs;
pub mod patches;
pub mod report;
pub mod rng;
pub mod slopes;
pub mod stats;
pub mod system;
pub mod systems;
pub mod transfer;
pub mod trig;

pub use error::{Error, Result};
pub use system::{FastSlowSystem, Jacobian2, TorusPoint};
pub use trig::{TrigPoly2, TrigTerm};
