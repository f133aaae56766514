//! Exact inference for DNA mixtures under the gamma peak-height model.
//!
//! The crate evaluates mixture likelihoods marker by marker with a
//! dynamic program over the allele-count chain, fits the model by maximum
//! likelihood, ranks contributor genotypes, and computes likelihood ratios
//! for kinship hypotheses between a mixture contributor and typed
//! relatives by four independent routes.

pub mod deconvolution;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod evidence;
pub mod kinship;
pub mod optim;
pub mod peak;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
