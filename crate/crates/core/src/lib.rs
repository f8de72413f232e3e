//! Randomization inference for lagged treatment effects in stepped-wedge
//! trials.
//!
//! The crate builds lag-specific families of nested permutation tests over
//! a stepped-wedge design, combines their p-values, inverts the combined
//! test into confidence intervals, and checks the joint-validity conditions
//! of such families on enumerable assignment spaces.

pub mod ci;
pub mod combine;
pub mod design;
pub mod dist;
pub mod error;
pub mod io;
pub mod mcrt;
pub mod permtest;
pub mod seed;
pub mod sim;
pub mod validate;

pub use error::{Error, Result};
