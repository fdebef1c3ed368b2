//! Zoom-in object proposals: a small spatial-correlation network that scores
//! regions for zooming and predicts boxes per overlap pattern, plus a
//! synthetic scene generator to train and evaluate it offline.

pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod scnet;
pub mod synth;
pub mod windows;

pub use error::{Error, Result};
pub use features::{load_features, roi_pool, save_features, FeatureImage, PooledVector};
pub use geometry::{
    apply_deltas, classify_overlap_pattern, iou, BBox, CornerDeltas, OverlapThresholds,
    PatternIndex,
};
pub use pipeline::{dense_baseline, propose, CostCounters, PipelineConfig, Proposer, ScoredBox};
pub use scnet::{ScNetConfig, ScNetModel, ScNetOutput};
pub use windows::{coarse_windows, cover_regions, dense_windows, Frame, WindowSpec};
