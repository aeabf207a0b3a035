//! Sequential calibration of three-parameter logistic (3PL) test items.
//!
//! The crate simulates the calibration of a new item: examinees are chosen
//! adaptively from a pool whose latent traits are known only up to a
//! shrinking measurement error, the item's parameters are re-estimated by
//! maximum likelihood after every batch, and sampling stops once the
//! confidence ellipsoid for the parameters is small enough.
//!
//! Three selection strategies are available (see [`design`]): the two-stage
//! design that targets the guessing parameter and `(a, b)` separately, a
//! strict D-optimal design, and random sampling. [`harness`] runs single
//! calibrations and Monte Carlo studies over a grid of items.

// `!(x > 0.0)` is used deliberately so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod curves;
pub mod design;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod irt_model;
pub mod report;
pub mod sequential;
pub mod simulation;
pub mod state;

pub use error::{CalibError, Result};
pub use irt_model::{icc, Gamma, ItemParams, ResponseRecord};
