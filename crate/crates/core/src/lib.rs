//! Caching-aided collaborative D2D data dissemination over mmWave links on a
//! factory floor.
//!
//! The crate is organised bottom-up:
//!
//! * [`scene`] holds the 2.5D factory geometry, object motion and exact
//!   point-to-point blockage queries.
//! * [`losmap`] turns geometry into probabilistic line-of-sight knowledge:
//!   grid maps toward the base station, D2D pair probabilities, time traces
//!   and short-horizon predictions.
//! * [`radio`] is the link-budget abstraction for the 28 GHz uplink and the
//!   60 GHz D2D link.
//! * [`dissemination`] holds the per-content state machine, in-device caches
//!   and the three dissemination strategies.
//! * [`engine`] runs the deterministic tick-driven simulation and aggregates
//!   replications.
//! * [`scenario`] is the JSON scenario file and the default factory layout;
//!   [`report`] writes CSV and SVG artifacts.

pub mod dissemination;
pub mod engine;
mod error;
pub mod losmap;
pub mod radio;
pub mod report;
pub mod scenario;
pub mod scene;

pub use error::{Error, Result};
