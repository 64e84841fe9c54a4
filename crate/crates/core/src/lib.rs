//! Landmark-aided underwater navigation with side-scan sonar.
//!
//! The crate provides the pieces of a sequential navigation stack for an
//! underwater vehicle that images the seafloor with a side-scan sonar:
//!
//! * [`geometry`]: ping footprints, rectangular landmarks, and the
//!   footprint/landmark crossing computation that yields slant ranges.
//! * [`models`]: the vehicle motion model, detection and clutter likelihoods,
//!   and auxiliary heading/altitude measurement models.
//! * [`association`]: probabilistic data association between sonar detections
//!   and mapped landmarks, with exact enumeration and a belief-propagation
//!   approximation.
//! * [`filter`]: the navigation filter, an unscented prediction step paired
//!   with a particle-reweighting update.
//! * [`simulator`]: closed-loop scenario simulation for generating ground
//!   truth runs with synthetic detections.
//! * [`evaluation`]: RMSE curves, error CDFs, and timing summaries.
//! * [`io`]: file formats (landmark maps, run logs, estimate logs, metrics).
//! * [`config`]: TOML configuration shared by the command-line tools.
//!
//! With the `parallel` feature (default) the particle update and batch runs
//! use rayon; reductions are fixed-order so results do not depend on the
//! worker count. Disabling the feature yields a fully sequential build.

// Negated comparisons like `!(x > 0.0)` are deliberate: they fail on NaN
// where the suggested rewrite would silently pass it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod config;
pub mod evaluation;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod models;
pub mod parallel;
pub mod simulator;

pub use geometry::{Landmark, LandmarkMap, VehicleState};
pub use models::{ControlInput, DrivingNoiseParams, MeasurementNoiseParams};
