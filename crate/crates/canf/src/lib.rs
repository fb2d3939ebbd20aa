//! Joint multi-step probabilistic time-series forecasting.
//!
//! The library fits an explicit joint distribution over full input-output
//! windows `y[t-L..=t+K]` and conditions it on the observed prefix to obtain
//! a distribution over the next `K` steps. Strategies:
//!
//! - `cg` — a single multivariate Gaussian, conditioned by Schur complement.
//! - `cgmm` — a Gaussian mixture fit by EM, conditioned component-wise.
//! - `canf` — a RealNVP normalizing flow fit to the joint density, then
//!   approximated by a many-component mixture of flow samples so it can be
//!   conditioned analytically.
//! - `jfnn` — a feedforward network emitting a low-rank mixture over the
//!   future block.
//! - `arma` / `ifnn` — single-step models rolled out iteratively by
//!   appending samples to the input window.
//!
//! Downstream, forecasts feed error metrics (WAPE, RWSE, log-likelihood)
//! and a value-at-risk scheduler that picks the cheapest `D` of the next
//! `K` hours; decision quality is scored by proportional regret.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod forecaster;
pub mod gaussian;
pub mod mixture;
pub mod neural;
pub mod seeding;

pub use error::{Error, Result};
