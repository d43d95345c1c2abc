//! Numerical laboratory for the Hartree equation
//! `i∂ₜψ = −Δψ + λVψ + ν(Φ∗|ψ|²)ψ` on a periodic spectral lattice.

pub mod error;
pub mod grid;
pub mod ground_state;
pub mod lanczos;
pub mod linearization;
pub mod many_body;
pub mod model;
pub mod newtonian;
pub mod observables;
pub mod potentials;
pub mod propagator;
pub mod quadrature;

pub use error::{Error, Result};
pub use grid::{Field, Lattice, SpectralPlan};
pub use model::{EnergyParts, Model};
pub use num_complex::Complex64 as C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
