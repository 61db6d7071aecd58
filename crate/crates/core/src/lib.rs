//! Desk-scale transfer-learning experiments.
//!
//! The crate bundles the pieces needed to run and analyse transfer chains
//! (generic pre-training → source task → target task) end to end:
//!
//! - [`metrics`]: mIoU, box mAP, keypoint AP at OKS 0.5, depth RMSE / δ.
//! - [`centernet`]: heatmap targets, focal/L1 losses and decoding.
//! - [`dense`]: segmentation cross-entropy and depth losses.
//! - [`distance`] and [`assignment`]: domain distances between datasets.
//! - [`gains`]: relative transfer gains, levels, aggregation, Kendall τ.
//! - [`toy`]: synthetic multi-domain datasets and small trainable models.
//! - [`io`], [`config`], [`harness`], [`report`]: files, plans and tables.

pub mod assignment;
pub mod centernet;
pub mod config;
pub mod dense;
pub mod distance;
pub mod error;
pub mod gains;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod report;
pub mod toy;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    BBox, DepthGrid, Detection, Direction, FeatureSet, Keypoint, KeypointInstance, LabelGrid,
    TaskType,
};
