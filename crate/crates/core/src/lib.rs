//! Critical Ising Glauber dynamics on small and medium lattices.
//!
//! * [`lattice`]: cubes, tori, block grids and shells.
//! * [`gibbs`]: exact and sampled Ising measures.
//! * [`glauber`]: flip rates and exact continuous-time simulation.
//! * [`spectral`]: generators, Dirichlet forms, spectral gap, log-Sobolev
//!   estimates and the Markov semigroup.
//! * [`inequalities`]: exact verifiers for the functional inequalities used
//!   to bound the decay of the spin autocorrelation.
//! * [`exponents`]: autocorrelation, arm and log-Sobolev scaling series.

pub mod error;
pub mod exponents;
pub mod gibbs;
pub mod inequalities;
pub mod glauber;
pub mod lattice;
pub mod rng;
pub mod spectral;
pub mod tolerances;

pub use error::{LabError, Result};
