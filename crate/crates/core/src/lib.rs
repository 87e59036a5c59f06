//! Robust contrastive learning toolkit: InfoNCE and RINCE losses with
//! analytic gradients, a small MLP encoder, synthetic latent-class data with
//! controllable view noise, exact optimal-transport bound checks, noisy-label
//! risk for threshold classifiers, and a deterministic training/evaluation
//! pipeline.

pub mod data;
pub mod divergence;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod objective;
pub mod ot;
pub mod risk;
pub mod rng;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
