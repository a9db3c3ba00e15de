//! Prompt tuning and wavelet prompt tuning for frozen-transformer audio
//! deepfake detection, with a synthetic all-type benchmark and an
//! evaluation harness.
//!
//! The crate is organized around a small f64 autodiff engine
//! ([`tensor`]), a 2-D Haar transform ([`wavelet`]), a frozen
//! convolutional-front-end transformer encoder ([`encoder`]), the prompt
//! assembly paradigms ([`prompting`]), an attentive-pooling classifier
//! head with weighted cross-entropy ([`head`]), synthetic benchmark
//! generation ([`data`]), EER scoring and interpretability exports
//! ([`eval`]), and the experiment driver ([`trainer`]).

pub mod error;
pub mod eval;
pub mod head;
pub mod model;
pub mod prompting;
pub mod tensor;
pub mod data;
pub mod encoder;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
