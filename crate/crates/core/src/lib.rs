//! Core of a federated hyperparameter-tuning simulator.
//!
//! Everything here is `no_std` with `alloc`: search spaces, synthetic
//! federations, a float64 FedAvg simulator, random Fourier client encodings,
//! the hyperparameter network and its REINFORCE trainer, and the random-search
//! baselines.
#![no_std]

extern crate alloc;

pub mod baselines;
pub mod data;
pub mod datagen;
pub mod encoding;
pub mod error;
pub mod fl;
pub mod mlp;
pub mod model;
pub mod policy;
pub mod rng;
pub mod rst;
pub mod sampling;
pub mod space;

pub use error::{Error, Result};
