//! CenterNet-style detection and keypoint heads: target encoding, training
//! losses with analytic gradients, and decoding back to boxes/keypoints.
//!
//! Every map is a `(channels, rows, cols)` array on the output grid, which
//! is the input image downsampled by `stride`.

mod decode;
mod loss;
mod targets;

use ndarray::Array3;

pub use decode::{
    decode_detections, decode_keypoints, nms, DecodeParams, KeypointDecodeParams, DEFAULT_NMS_IOU,
};
pub use loss::{
    detection_loss_grad, focal_loss, focal_loss_grad, focal_loss_logits_grad, keypoint_loss_grad,
    masked_l1_grad, masked_l1_loss, sigmoid, total_detection_loss, DetectionLoss,
    DetectionLossWeights, FocalParams, KeypointLoss, KeypointLossWeights,
};
pub use targets::{
    encode_detection_targets, encode_keypoint_targets, feature_dim, gaussian_radius, Center,
    KeypointTargetMaps, MaskedTarget, TargetMaps, DEFAULT_MIN_IOU,
};

/// Predicted detection maps. `heatmap` holds per-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMaps {
    pub heatmap: Array3<f64>,
    pub offset: Array3<f64>,
    pub size: Array3<f64>,
}

/// Predicted keypoint maps on top of the object maps.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointMaps {
    pub detection: DetectionMaps,
    pub heatmap: Array3<f64>,
    pub offset: Array3<f64>,
    pub allocation: Array3<f64>,
}
