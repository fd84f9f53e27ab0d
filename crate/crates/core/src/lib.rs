#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons also reject NaN

pub mod actuation;
pub mod agent;
pub mod config;
pub mod controllers;
pub mod error;
pub mod harness;
pub mod model;
pub mod population;
pub mod rng;
pub mod stochastic;

pub use error::{Error, Result};
