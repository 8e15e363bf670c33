//! Learned internal models for simulated dexterous hands.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece:
//!
//! - [`nn`]: a small dense-network engine with analytic gradients and Adam.
//! - [`hand`]: kinematic hand simulator presets and an in-hand object model.
//! - [`internal`]: forward / inverse model training on random-exploration data.
//! - [`plan`]: CEM, bidirectional (inverse-initialised) CEM, random shooting,
//!   gradient planning and an MPC executor.
//! - [`factorized`]: frozen-hand + external-object dynamics for in-hand
//!   reorientation and a monolithic baseline.
//! - [`gesture`]: a cost-function DSL over fingertip positions.
//!
//! IO, file formats and the command line live in the `dexhand` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod factorized;
pub mod gesture;
pub mod hand;
pub mod internal;
pub mod math;
pub mod nn;
pub mod plan;
pub mod rng;

pub use error::{Error, Result};
