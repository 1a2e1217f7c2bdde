//! Simulation of charging-station selection for electric vehicles that learn
//! station conditions through road-side units.
//!
//! Stations publish their queue state, RSUs relay it to passing vehicles by
//! push or pull, and each vehicle picks a station once its battery falls
//! below a threshold. [`engine`] drives the whole system as a discrete-event
//! simulation; [`analysis`] holds the straight-road access-probability model.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod comms;
pub mod decision;
pub mod domain;
pub mod engine;
pub mod error;
pub mod roadnet;
pub mod station;

pub use error::{Error, Result};
