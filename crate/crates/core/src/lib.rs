//! Learn linear sliding-window detectors from summary statistics of a
//! negative image corpus, without revisiting the negative examples.
//!
//! Under the stationarity assumption, the covariance of every sub-window of
//! the corpus is a block two-level Toeplitz matrix parameterised by an array
//! of relative-displacement covariances. This crate gathers those statistics
//! ([`stats`]), applies the implied covariance operator with FFT
//! cross-correlations ([`toeplitz`]), projects it onto the nearest block
//! two-level circulant matrix for closed-form solves and preconditioning
//! ([`circulant`]), and solves the resulting LDA system with a choice of
//! dense, iterative and closed-form back-ends ([`solvers`], [`trainer`]).
//! Dense scoring, non-maximum suppression and ground-truth matching live in
//! [`detect`]; simple pluggable feature transforms in [`features`].

pub mod circulant;
pub mod dense;
pub mod detect;
pub mod error;
pub mod features;
pub mod fft;
pub mod memory;
pub mod solvers;
pub mod stats;
pub mod synth;
pub mod template;
pub mod toeplitz;
pub mod trainer;

pub use error::{Error, Result};
pub use template::Template;
