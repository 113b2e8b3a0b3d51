//! Continuous simplicial neural networks on 2-complexes.
//!
//! The crate is organised bottom-up:
//!
//! * [`complex`] builds oriented simplicial 2-complexes, their boundary
//!   matrices and Hodge Laplacians, Delaunay-based generators and additive
//!   perturbations of the boundary maps.
//! * [`spectral`] holds the symmetric eigensolver, spectral truncation and the
//!   closed-form heat-kernel filters, together with a dense matrix-exponential
//!   oracle and an explicit-Euler diffusion integrator.
//! * [`nn`] implements the polynomial (discrete) and exponential (continuous)
//!   simplicial layers with hand-written backward passes.
//! * [`analysis`] evaluates Dirichlet energies and the stability and
//!   over-smoothing bounds.
//! * [`experiments`] wires everything into reproducible sweeps that write CSV.

pub mod analysis;
pub mod complex;
pub mod experiments;
pub mod nn;
pub mod spectral;

mod error;
pub mod rng;

pub use error::{Error, Result};
