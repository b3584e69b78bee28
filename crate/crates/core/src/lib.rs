//! Multi-view keypoint refinement.
//!
//! Tentative matches between keypoints of several images form a graph.
//! Every directed edge gets a local flow field from a patch aligner (or an
//! oracle), the graph is split into tracks and bounded components, and each
//! component is refined by a robust, L1-bounded least-squares solve.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod optimize;
pub mod partition;
pub mod pipeline;
pub mod synth;

/// Pixel coordinates or displacements.
pub type Point2 = nalgebra::Vector2<f64>;

pub use error::{Error, Result};
pub use graph::{build_graph, ImageRef, Keypoint, KeypointInput, MatchEdge, MatchGraph, PairMatches};
pub use optimize::{refine_graph, Mode, SolverOptions};
