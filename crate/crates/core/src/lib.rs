//! Hyperspectral image classification with grid-based artificial labels.
//!
//! A network is first trained on the whole image with labels produced by a
//! spatial partition (grid cells or stripes), then its last layer is replaced
//! and it is fine-tuned on a handful of expert labels.

mod binio;
pub mod error;
pub mod evalreport;
pub mod experiment;
pub mod hsdata;
pub mod labeling;
pub mod models;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
