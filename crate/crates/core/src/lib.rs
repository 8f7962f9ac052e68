//! Numerics for robust exploratory mean-variance portfolio selection.
//!
//! The crate is `no_std` with `alloc`; file formats, configuration and the
//! command-line front end live in the `robustmv` crate.

#![no_std]

extern crate alloc;

pub mod adam;
pub mod admissible;
pub mod calibration;
pub mod closed_form;
pub mod convexity;
pub mod error;
pub mod exec;
pub mod math;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod variance;

pub use error::{Error, Result};
