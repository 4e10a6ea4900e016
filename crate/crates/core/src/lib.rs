//! Simulation of a self-homodyne coherent optical link whose carrier rides on
//! the polarization orthogonal to a QPSK signal, together with the feedback
//! polarization controller that re-separates the two at the receiver by
//! minimizing the optical power in one output of the receive splitter.
//!
//! The crate is organised bottom-up:
//!
//! - [`jones`]: Jones vectors and matrices, rotators, waveplates, splitter and
//!   combiner models.
//! - [`waveform`]: sampled dual-polarization waveforms, QPSK mapping, carrier
//!   launch and photodetector-style power averaging.
//! - [`channel`]: lumped polarization impairment, chromatic dispersion and
//!   ASE-like noise.
//! - [`controller`]: the three-waveplate controller model, the measured plant
//!   and the gradient-descent power minimization loop.
//! - [`receiver`]: self-homodyne detection, phase recovery and EVM.
//! - [`harness`]: configuration, experiment orchestration and CSV/summary
//!   emission used by the `polmux` binary.

pub mod channel;
pub mod controller;
pub mod error;
pub mod harness;
pub mod jones;
pub mod receiver;
pub mod waveform;

pub use error::{Error, Result};
pub use jones::{JonesMatrix, JonesVector, PolPower};
