//! Stochastic 2D Euler equation on the unit torus in Lagrangian form.

pub mod analysis;
pub mod commutator;
pub mod doss;
pub mod config;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod kernel;
pub mod noise;
pub mod special;
pub mod spectral;
pub mod torus;
pub mod vorticity;

pub use error::{Error, Result};
pub use torus::TorusPoint;
