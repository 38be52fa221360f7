//! Registration of aerial ortho-imagery to the local frame of a SLAM base map.
//!
//! The pipeline estimates a per-frame translation between base-map and
//! aerial crops by maximizing mutual information of edge features, collects
//! reviewed estimates into a 5 m offset grid, fills it into a dense
//! correction field and cuts offset-corrected ego-centered aerial crops.
//!
//! Modules, in pipeline order:
//! - [`raster`]: georeferenced layers, crops and overlays
//! - [`imaging`]: CLAHE, Canny and edge smoothing
//! - [`registration`]: MI scoring, shift search, batch alignment, sampling
//! - [`offsetgrid`]: sparse accumulation, interpolation and lookup
//! - [`dataset`]: corrected crop sets
//! - [`evaluation`]: ALDE metrics, reports and synthetic ground truth

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod jsonl;
pub mod offsetgrid;
pub mod raster;
pub mod registration;

pub use error::{Error, Result};
