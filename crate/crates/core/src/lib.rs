//! Subsampled one-step (SOS) M-estimation.
//!
//! A uniform Bernoulli subsample is fitted by Newton–Raphson, and the
//! resulting estimate is corrected by one Newton step that uses the
//! subsample Hessian together with a single streaming pass over the full
//! data for the mean gradient. [`inference`] builds confidence intervals
//! from the limiting law of the corrected estimate by Monte Carlo.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, threading and
//! the command line live in the companion `sos` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod simulate;

pub use data::{Chunk, Dataset, Table};
pub use error::{Error, Result};
pub use models::{LossModel, ModelKind, Order};
