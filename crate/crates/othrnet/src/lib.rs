//! Measurement-level fusion engine for an over-the-horizon radar (OTHR)
//! network. The crate simulates multipath slant-coordinate returns of multiple
//! targets observed through an uncertain two-layer ionosphere, then jointly
//! performs target detection, tracking, multipath data association, and
//! ionospheric height identification by combined belief-propagation /
//! mean-field message passing on a sliding window of scans.
//!
//! Module map:
//! - [`geometry`]: slant/UTM coordinate maps and their Jacobians
//! - [`simulator`]: scenario configuration and seeded data generation
//! - [`association`]: per-scan loopy-BP multipath data association
//! - [`kinematics`]: extended Kalman filtering/smoothing of target states
//! - [`visibility`]: HMM smoothing of target visibility and track lifecycle
//! - [`ionosphere`]: layer-height filtering with target feedback
//! - [`initialization`]: measurement clustering and track seeding
//! - [`fusion`]: the sliding-window orchestrator
//! - [`metrics`]: track-to-truth assignment and evaluation metrics

pub mod assignment;
pub mod association;
pub mod config;
pub mod fusion;
pub mod geometry;
pub mod initialization;
pub mod io;
pub mod ionosphere;
pub mod kinematics;
pub mod metrics;
pub mod simulator;
pub mod visibility;

pub use geometry::{PathHeights, SiteConfig, SlantMeasurement, UtmState};
