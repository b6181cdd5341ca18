//! Classification of resting-state fMRI independent components into NOISE,
//! RSN and SOZ, with seizure-onset-zone localization.
//!
//! A convolutional noise gate screens each component; an expert-knowledge
//! linear model over four hand-crafted features scores the rest. The
//! [`fusion`] module combines both, [`eval`] runs leave-one-patient-out
//! evaluation, and [`phantom`] synthesizes datasets with known ground truth.

pub mod balance;
pub mod config;
pub mod dataset;
pub mod eki;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod io;
pub mod noise_net;
pub mod phantom;
pub mod raster;
pub mod report;
pub mod slices;

pub use error::{Error, Result};
