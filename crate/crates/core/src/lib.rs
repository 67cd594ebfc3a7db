//! Uncertainty-aware active learning for multi-output regression.
//!
//! A dropout regressor trained with an attenuated (heteroscedastic) loss is
//! queried with Monte-Carlo dropout for mean predictions, epistemic spread
//! and learned aleatoric variance. Those predictions drive pool-based
//! acquisition: random, epistemic uncertainty, k-Center Greedy (CoreSet) and
//! CKE, a k-Center Greedy variant whose distances are shifted by the
//! epistemic deviation.
//!
//! * [`data`]: synthetic tasks, the dataset text format, normalization.
//! * [`model`]: the network, losses, backprop, Adam, Monte-Carlo prediction.
//! * [`acquisition`]: the four selectors.
//! * [`al_loop`]: stages, trials and report aggregation.
//! * [`config`] and [`report`]: experiment files.

pub mod acquisition;
pub mod al_loop;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
