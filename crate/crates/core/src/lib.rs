//! Spatiotemporal demand forecasting for bike-share station grids.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! layers built on it ([`nn`]), the forecasting networks and their ablation
//! variants ([`model`]), trip ingestion ([`data`]), optimisation
//! ([`train`]), the benchmark harness ([`bench`]), finite-difference checks
//! ([`verify`]) and the `stdi` command line ([`cli`]).

pub mod error;
pub mod bench;
pub mod cli;
pub mod data;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
