//! Steering-angle and speed prediction from frame sequences.
//!
//! The crate is organised bottom-up: [`tensor`] (fp64 autodiff), [`imaging`]
//! (PPM I/O, optical flow, augmentation), [`model`] (DAVE2, residual
//! regressor, CNN-LSTM, dual-branch and single-branch transformers),
//! [`training`], [`dataset`], [`evaluation`] and the [`cli`] driver.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod imaging;
pub mod model;
pub mod rng;
pub mod training;
