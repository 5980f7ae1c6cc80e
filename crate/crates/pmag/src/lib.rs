//! Pulse-signal magnification for remote heart-rate estimation from
//! compressed video.
//!
//! The crate is organized around a two-stage pipeline:
//!
//! 1. An rPPG estimator (a temporal-derivative 3D conv network) is trained
//!    on uncompressed clips to map video to a pulse signal.
//! 2. A video-to-video magnification network (a 3D U-Net) is trained on
//!    compressed clips, with the estimator frozen, so that the composed
//!    model recovers the pulse signal despite compression damage.
//!
//! Supporting modules cover spectral signal processing ([`signal`]), the
//! training objectives ([`losses`]), the networks themselves ([`models`]),
//! synthetic data generation and ingestion ([`data`]), H.264 encoding
//! round trips ([`compression`]), training orchestration ([`training`]),
//! and metric/report emission ([`evaluation`]).

pub mod compression;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod nn;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
