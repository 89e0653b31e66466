//! Citywide traffic-grade prediction from multi-resolution traffic history.
//!
//! The pipeline has four stages:
//!
//! 1. [`graphs`] builds four road graphs (hop topology, length-weighted
//!    topology, DTW traffic-pattern similarity, attribute similarity) and
//!    the spatial autocorrelation statistics over road connectivity.
//! 2. [`grading`] labels every (road, hour) observation with an ordinal
//!    congestion grade using a self-organizing map.
//! 3. [`model`] extracts twelve spatial-temporal feature combinations
//!    (three temporal resolutions by four graphs) with a shared two-channel
//!    graph convolution and temporal self-attention, fuses them with a
//!    high-dimensional multi-head self-attention layer and classifies each
//!    road's future grade.
//! 4. [`explain`] turns the fusion layer's attention tensor into
//!    importance scores per combination, per resolution and per graph.
//!
//! [`numcore`] holds the dense tensor arithmetic, hand-written backward
//! passes and the Adam optimizer that the model is trained with.

pub mod dataset;
pub mod error;
pub mod exec;
pub mod explain;
pub mod grading;
pub mod graphs;
pub mod metrics;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};
pub use exec::Parallelism;
pub use numcore::{ParamSet, Tensor};
