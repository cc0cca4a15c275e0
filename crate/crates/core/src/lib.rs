//! Simulation and estimation library for a MIMO dual-function
//! radar-communication system transmitting OTFS waveforms.
//!
//! The pipeline covers OTFS modulation ([`grid`]), multi-target channel
//! synthesis ([`channel`]), coarse angle / range / velocity estimation
//! ([`coarse`]), private-bin virtual-array super-resolution via sparse
//! recovery ([`virtual_array`], [`ssr`]) and the communication link with
//! private-bin symbol restructuring and MIMO LMMSE equalization ([`comm`]).
//! [`harness`] drives the batch experiments used by the CLI.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod coarse;
pub mod comm;
pub mod error;
pub mod grid;
pub mod harness;
pub mod rng;
pub mod ssr;
pub mod virtual_array;

pub use num_complex::Complex64;

pub use channel::{ArrayConfig, CommPaths, MimoDdChannel, Scenario, SparseDdChannel, Target};
pub use coarse::{AngleSpectrum, CoarseEstimate, PeakConfig};
pub use comm::{LinkReport, RateReport};
pub use error::{Error, Result};
pub use grid::{DdFrame, FrameConfig, ReducedIsfftMatrix, TfFrame};
pub use ssr::{SsrParams, SsrSolution};
pub use virtual_array::{PrivateBinPlan, TargetGrid, VirtualMeasurement};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
