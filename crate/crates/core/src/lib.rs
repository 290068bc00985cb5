//! Benchmark framework for label-based extrapolation in graph property
//! regression.
//!
//! `graph` holds the data model and dataset format, `isomorph` the matching
//! and enumeration machinery, `pretext` the self-supervised targets, `model`
//! and `optim` the graph transformer and its training primitives, `pipeline`
//! the splitting and experiment protocol, and `eval` the metrics.

pub mod error;
pub mod eval;
pub mod graph;
pub mod isomorph;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod pretext;

pub use error::{Error, ErrorKind, Result};
