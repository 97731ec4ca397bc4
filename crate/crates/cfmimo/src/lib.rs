//! Uplink spectral-efficiency simulation of scalable cell-free massive MIMO
//! with transceiver hardware impairments.
//!
//! The crate is organized bottom-up: [`geometry`] draws the network,
//! [`impairments`] and [`channel`] synthesize coherence blocks,
//! [`estimation`] forms LMMSE channel estimates, [`combining`] builds the
//! receive combiners, [`evaluation`] runs the Monte-Carlo capacity bounds,
//! [`deterministic`] evaluates the large-system SINR approximation and
//! [`harness`] wires everything into configurable experiments.

pub mod channel;
pub mod combining;
pub mod deterministic;
pub mod estimation;
pub mod evaluation;
pub mod geometry;
pub mod harness;
pub mod impairments;
pub mod linalg;
pub mod rng;
pub mod stats;
