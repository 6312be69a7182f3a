//! Crosstalk characterization of two-qubit processors with nested
//! gate-set-tomography models.
//!
//! The crate is organized bottom-up: [`superop`] and [`linalg`] provide channel
//! algebra, [`errorgen`] maps between gates and error generators, [`circuits`]
//! builds experiment designs, [`models`] defines the three nested model families,
//! [`simulate`] produces datasets, [`fit`] estimates models, [`select`] compares
//! them, and [`rb`] analyzes simultaneous randomized benchmarking.

pub mod circuits;
pub mod engine;
pub mod error;
pub mod errorgen;
pub mod fit;
pub mod linalg;
pub mod models;
pub mod noise;
pub mod optimize;
pub mod rb;
pub mod sdp;
pub mod select;
pub mod simulate;
pub mod superop;

pub use error::{Error, Result};
