//! Discrete-time survival modelling for supplier-to-plant shortfall forecasting.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numerical piece
//! of the toolkit:
//!
//! * [`survival`]: hazard/survival/mass conversions, the right-censored
//!   log-likelihood, the linear logistic-hazard baseline and Kaplan-Meier.
//! * [`autodiff`]: a small reverse-mode tape with the layers the sequence
//!   model needs (dense, embedding, GRU, additive attention) and Adam.
//! * [`model`]: the heterogeneous sequence-to-survival network and its
//!   training loop.
//! * [`data`]: windowing, labelling, normalization and dataset assembly.
//! * [`synth`]: a seeded heterogeneous lane simulator.
//! * [`qa`]: adapted confusion counts, precision/recall and the rolling
//!   retrain-evaluate harness.
//! * [`explain`]: Shapley attributions and waterfall tables.
//!
//! File formats, configuration and the command line live in the `shortfall`
//! crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
mod error;
pub mod explain;
pub(crate) mod math;
pub mod model;
pub mod qa;
pub mod rng;
pub mod survival;
pub mod synth;

pub use error::{Error, Result};
