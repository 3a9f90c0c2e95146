//! Over-the-air swarm control with integrated radar sensing.
//!
//! A base station with an N_r/N_t antenna array controls N UAVs. In each control
//! period the UAVs transmit their states simultaneously and the superposed
//! uplink signal is post-processed into the swarm control vector, the control is
//! dispatched back over a downlink whose precoder is co-designed with a radar
//! beam, and both links are used to estimate the azimuth of a passive object
//! with MUSIC.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod downlink;
pub mod error;
pub mod linalg;
pub mod music;
pub mod rng;
pub mod sim;
pub mod subproblem;
pub mod swarm;
pub mod uplink;

pub use error::{Error, Result};
