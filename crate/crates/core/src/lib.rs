//! Robust instrumental-variable estimation under structural mean models:
//! standard and plug-in two-stage estimators, locally efficient and
//! double-robust G-estimators, and their efficiency-maximizing and
//! bias-reduced variants, with a Monte Carlo harness.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod basis;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod registry;
pub mod replicate;
pub mod rng;
pub mod simlab;

pub use error::{Error, Result};
pub use nalgebra;
