//! Oriented site percolation and directed polymers in a Bernoulli environment.
//!
//! Sites of `Z+ x Z^d` (d ≤ 3) are open independently with probability `p`; a
//! path moves forward in time with ℓ₁ steps of size at most one, and its energy
//! counts the closed sites it visits after time 0. The crate computes path
//! counts and partition functions by transfer-slice recursion, connectivity by
//! bitset reachability, and the coupling events and Monte Carlo estimators built
//! on top of them.

pub mod env;
pub mod error;
pub mod estimate;
pub mod events;
pub mod lattice;
pub mod perco;
pub mod polymer;
pub mod stats;

pub use env::{coupled_pair, derive_seed, Environment, EnvironmentWindow, UniformField};
pub use error::{Error, Result};
pub use lattice::{LatticePoint, Pos};
pub use polymer::{ExtendedBeta, Path};
