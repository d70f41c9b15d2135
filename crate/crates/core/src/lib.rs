//! Core algorithms for federated TD(0) policy evaluation across agents whose
//! Markov reward processes differ by a controlled amount.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! experiment harness live in the `fedtd` crate.
#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod engine;
pub mod error;
pub mod features;
pub mod linalg;
pub mod markov;
pub mod rng;
pub mod sampling;
pub mod td;

pub use error::{Error, Result};
pub use nalgebra;
