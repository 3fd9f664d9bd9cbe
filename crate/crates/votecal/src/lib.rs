//! Calibrated weighted-vote aggregation for verifier-scored answer
//! ensembles.
//!
//! Given pre-scored ensembles of candidate answers (generations scored by a
//! process reward model), this crate learns weighting functions from a
//! labeled calibration set and selects final answers by calibrated weighted
//! majority vote. It ships the standard selection baselines, a synthetic
//! generator–verifier data source with closed-form optimal weights, and a
//! deterministic Monte-Carlo evaluation harness.
//!
//! Module map:
//! - [`data`]: domain types, canonicalization, clamping, vote tallies.
//! - [`density`]: logit-space Gaussian KDE with stable log-density.
//! - [`aggregate`]: selection strategies and the log-likelihood oracle.
//! - [`calibrate`]: calibrator/weight fitting and artifact serialization.
//! - [`synth`]: synthetic data with analytically known optimal weights.
//! - [`eval`]: scaling curves, sweeps, and estimation-gap reports.
//! - [`jsonl`]: dataset file format, validation, atomic writes.

pub mod aggregate;
pub mod calibrate;
pub mod data;
pub mod density;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod synth;

pub use error::{Error, Result};
