//! Statistical postprocessing of ensemble temperature forecasts with
//! time-series extensions of EMOS.
//!
//! The crate turns an `m`-member ensemble forecast into a Gaussian predictive
//! distribution `N(mu, sigma^2)`. Six model variants share one interface:
//!
//! | kind              | location                         | scale                        |
//! |-------------------|----------------------------------|------------------------------|
//! | `EMOS`            | `a0 + a1 * mean` (30-day window) | `exp(b0 + b1 * log sd)`      |
//! | `AR-EMOS`         | mean of AR-adjusted members      | convex mix of two spreads    |
//! | `SEMOS`           | Fourier-seasonal regression      | Fourier-seasonal log-linear  |
//! | `DAR-SEMOS`       | SEMOS + AR on forecast errors    | SEMOS                        |
//! | `DAR-GARCH-SEMOS` | SEMOS + AR on forecast errors    | SEMOS x GARCH(1,1) factor    |
//! | `SAR-SEMOS`       | SEMOS + AR on standardized error | SEMOS                        |
//!
//! The SEMOS family is fitted once on a static training period by minimizing
//! the mean CRPS with BFGS. Predictions respect the lead time: residuals that
//! would not yet be observed at issuance are filled in by AR recursion.
//!
//! Alongside the models the crate carries the verification toolbox used to
//! compare them: CRPS, LogS, PIT, central-interval coverage, verification
//! ranks, Diebold-Mariano tests, Benjamini-Hochberg control and Ljung-Box
//! residual diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
mod error;
pub mod models;
pub mod optimize;
pub mod scoring;
pub mod seasonal;
pub mod special;
pub mod timeseries;
pub mod verify;

pub use error::{Error, Result};
