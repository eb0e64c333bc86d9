//! Simulation laboratory for studying gradient-sign jamming of raw-IQ
//! modulation classifiers under realistic receiver effects.
//!
//! The crate covers the full loop: synthetic dataset generation
//! ([`dataset`]), a from-scratch convolutional classifier with exact
//! reverse-mode gradients ([`classifier`]), power-constrained sign-gradient
//! and Gaussian jamming ([`attack`]), a root-raised-cosine modem for bit
//! error measurement ([`modem`]), channel impairments ([`channel`]), and
//! seeded Monte Carlo sweeps that tie them together ([`experiments`]).

pub mod attack;
pub mod channel;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod modem;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};
