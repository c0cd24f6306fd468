//! Core library for ETH, a temporal knowledge-graph forecasting model that
//! scores candidate entities with a blend of Euclidean dot products and
//! hyperbolic (Poincaré-ball) distances.
//!
//! Modules:
//! - [`geometry`]: plain-`f64` Poincaré-ball operations (exp/log maps, Möbius
//!   addition, geodesic distance) used as the reference implementation.
//! - [`diff`]: minimal reverse-mode autodiff over dense matrices, plus Adam.
//! - [`data`]: quadruple datasets, time snapshots, history windows, and a
//!   synthetic generator.
//! - [`model`]: the ETH scoring pipeline with ablation switches.
//! - [`train`]: epoch loop, loss, early stopping, checkpointing.
//! - [`eval`]: ranking metrics, hierarchy scoring, diagnostics export.

pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod train;

pub use error::{EthError, Result};

/// Seeded RNG for tests: one constructor so every test names only a seed.
#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha12Rng::seed_from_u64(seed)
}
