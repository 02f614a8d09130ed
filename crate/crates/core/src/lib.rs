//! Test-time adaptation of a frozen segmentation network through
//! time-conditioned modulation of its normalization layers, driven by the
//! intermediate images of an iterative reconstruction.

pub mod arrays;
pub mod backbone;
pub mod error;
pub mod metrics;
pub mod modulator;
pub mod nn;
pub mod recon;
pub mod tta;
pub mod uncertainty;
pub mod volume;

pub use error::{Error, Result};
