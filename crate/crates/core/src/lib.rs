//! Noise-aware assembly planning with movable fiducial markers.
//!
//! A robot builds a block structure while localizing against visual fiducial
//! markers that it can pick up and reposition. This crate provides the pieces
//! of that pipeline:
//!
//! - [`mat3`] / [`stats`] / [`geom`]: small numeric kernels (symmetric 3x3
//!   eigendecomposition, `erf`, seeded multivariate Gaussian sampling,
//!   segment/box intersection).
//! - [`camera`] / [`sim`] / [`dataset`]: a fisheye detection simulator that
//!   projects marker corners, perturbs them with pixel noise, and re-estimates
//!   the marker pose to measure position-noise covariances.
//! - [`noise`]: covariance prediction from relative position, multi-marker
//!   covariance fusion, the closed-form certainty bound, and coverage radii.
//! - [`calibrate`]: fits the eigenvalue predictor from simulator datasets and
//!   scores its conservativeness on held-out data.
//! - [`structure`] / [`cluster`] / [`tour`] / [`walk`] / [`plan`]: the
//!   layer-by-layer assembly planner.
//! - [`check`]: replays a plan against the structure geometry, verifying
//!   marker lines of sight and per-step certainty.
//! - [`demo1d`]: a one-dimensional two-beacon world with closed-form answers,
//!   used as an end-to-end regression anchor.

pub mod calibrate;
pub mod camera;
pub mod check;
pub mod cluster;
pub mod dataset;
pub mod demo1d;
pub mod geom;
pub mod mat3;
pub mod noise;
pub mod plan;
pub mod sim;
pub mod stats;
pub mod structure;
pub mod tour;
pub mod walk;

mod error;

pub use error::{Error, Result};
pub use mat3::{EigenDecomp3, SymMat3};
pub use noise::{CertaintyParams, EigenvaluePredictor};
