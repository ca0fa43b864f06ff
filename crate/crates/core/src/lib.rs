//! Offline two-stage multi-object tracking.
//!
//! The first stage links detections frame by frame with a thresholded
//! linear assignment, producing short but pure tracklets. The second stage
//! merges tracklets into trajectories by classifying the edges of a sparse
//! tracklet graph with a small message-passing network, repeated over a
//! hierarchy of levels.
//!
//! Module map:
//!
//! - [`types`]: boxes, detections, tracklets, sequence bundles
//! - [`geometry`]: IoU/GIoU and pairwise box features
//! - [`motion`]: constant-velocity Kalman filter
//! - [`stage1`]: cost matrices, assignment solver, frame-by-frame tracker
//! - [`tgraph`]: tracklet graph construction and edge features
//! - [`autodiff`]: reverse-mode tape, focal loss, Adam, checkpoints
//! - [`mpnn`]: encoders, message passing, edge classifier, training
//! - [`hierarchy`]: rounding, merging, hierarchical inference, interpolation
//! - [`metrics`]: IDF1, ID switches, high purity rate
//! - [`dataio`]: MOTChallenge-style files, embeddings, synthetic data, augmentation
//! - [`config`] and [`pipeline`]: run configuration and end-to-end drivers

pub mod autodiff;
pub mod config;
pub mod dataio;
mod error;
pub mod geometry;
pub mod hierarchy;
pub mod metrics;
pub mod motion;
pub mod mpnn;
pub mod pipeline;
pub mod stage1;
pub mod tgraph;
pub mod types;

pub use error::{Error, Result};
pub use types::{BBox, Detection, Frame, GtRecord, SequenceBundle, Tracklet, Trajectory};
