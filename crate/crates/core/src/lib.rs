//! Face template inversion: recover a face image from a leaked recognition
//! template by predicting region-wise attribute semantics, fusing them with the
//! template through conditional attention, and projecting into a generator's
//! latent space. Includes the adversarial training loop and a full biometric
//! evaluation harness.

pub mod adversarial;
pub mod backends;
pub mod error;
pub mod eval;
pub mod flp;
pub mod nn;
pub mod pipeline;
pub mod semantics;
pub mod taa;

pub use error::{Error, Result};
