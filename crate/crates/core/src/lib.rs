//! Algorithmic core of the factor-invariance workbench.
//!
//! Everything here is pure computation over in-memory data: the procedural
//! factor world, colorimetry, a small CPU neural-network stack, the
//! mutual-information GAN used to discover latent factors, the three
//! invariance interventions, subpopulation metrics and the evaluation
//! settings that compose them. File formats, checkpoints, orchestration and
//! the command line live in the `acai-workbench` crate.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. With `std` enabled the matrix kernels pick up runtime CPU
//! feature detection.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod color;
pub mod error;
pub mod generative;
pub mod harness;
pub mod interventions;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod task;
pub mod world;

pub use error::{Error, Result};

/// Probability floor used inside every logarithm.
pub const PROB_EPS: f64 = 1e-6;

/// FNV-1a digest of a serializable value's JSON encoding, as 16 hex digits.
///
/// Used to stamp checkpoints and reports with the configuration that
/// produced them.
pub fn config_hash<T: serde::Serialize>(value: &T) -> alloc::string::String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    alloc::format!("{h:016x}")
}
