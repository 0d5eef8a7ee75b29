//! Sidewalk width estimation from a semantic mask and dense 3D geometry.
//!
//! The pipeline fits a ground plane to road and sidewalk points, converts
//! the arbitrary reconstruction scale to metres using the known camera
//! mounting height, and measures the sidewalk column by column within a
//! central image band. Supporting modules generate synthetic scenes with
//! exact ground truth, evaluate results, and sample street networks for
//! city-scale runs.

// Negated comparisons deliberately route NaN to the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod eval;
pub mod ingest;
pub mod measure;
pub mod netsample;
pub mod pipeline;
pub mod planefit;
pub mod stats;
pub mod synth;

pub use config::PipelineConfig;
