//! Numerical estimation of reachable and controllability sets for a two-level
//! open quantum system driven by piecewise-constant coherent and incoherent
//! controls.
//!
//! The system state is a Bloch vector in the closed unit ball; its dynamics is
//! a linear-affine ODE whose matrices are built from the physical parameters
//! (ω, γ, κ). Sets are estimated with the section method: an outer axis-aligned
//! box obtained by extremizing endpoint coordinates, followed by per-node
//! classification of a uniform ball grid via derivative-free global
//! optimization (differential evolution and dual annealing).

pub mod controls;
pub mod dynamics;
pub mod estimation;
pub mod objectives;
pub mod optimize;

pub mod config;
pub mod run;
pub mod store;
pub mod validate;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Version string baked into run records so results are traceable to a build.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
