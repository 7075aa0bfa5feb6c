//! Simulator for analog physical-layer relay attacks on time-division duplex
//! short-range radio and on multi-carrier phase-based ranging.
//!
//! The crate is layered bottom-up:
//!
//! - [`channel`]: reciprocal propagation between antennas.
//! - [`mcpr`]: the legitimate two-way tone exchange and distance estimator.
//! - [`relay`]: the amplify-and-forward attacker with phase and amplitude
//!   manipulation.
//! - [`tdd`]: power-detector and switch timeline.
//! - [`detection`]: reciprocity-based relay detection.
//! - [`harness`]: scenario files, experiment runners and CSV output.

// Negated comparisons reject NaN inputs along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod detection;
pub mod harness;
pub mod mcpr;
pub mod relay;
pub mod tdd;
