use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::targets::{KeypointTargetMaps, MaskedTarget, TargetMaps};
use super::{DetectionMaps, KeypointMaps};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub beta: f64,
    /// Predictions are clamped to `[eps, 1 - eps]`.
    pub eps: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 2.0,
            beta: 4.0,
            eps: 1e-4,
        }
    }
}

/// Penalty-reduced focal loss over a class heatmap, normalised by the
/// number of pixels where the target equals exactly 1.
pub fn focal_loss(pred: &Array3<f64>, target: &Array3<f64>, params: FocalParams) -> Result<f64> {
    focal_loss_grad(pred, target, params).map(|(l, _)| l)
}

/// [`focal_loss`] and its gradient with respect to `pred`. The gradient is
/// zero wherever the clamp is active.
pub fn focal_loss_grad(
    pred: &Array3<f64>,
    target: &Array3<f64>,
    params: FocalParams,
) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "heatmap {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = target.iter().filter(|&&y| y == 1.0).count();
    if n == 0 {
        return Err(Error::NoCenters);
    }
    let FocalParams { alpha, beta, eps } = params;
    let inv_n = 1.0 / n as f64;
    let mut grad = Array3::zeros(pred.dim());
    let mut sum = 0.0;
    for ((g, &raw), &y) in grad.iter_mut().zip(pred).zip(target) {
        let p = raw.clamp(eps, 1.0 - eps);
        let clamped = p != raw;
        let (term, dterm) = if y == 1.0 {
            let q = 1.0 - p;
            let t = q.powf(alpha) * p.ln();
            let dt = -alpha * q.powf(alpha - 1.0) * p.ln() + q.powf(alpha) / p;
            (t, dt)
        } else {
            let wgt = (1.0 - y).powf(beta);
            let l1p = (1.0 - p).ln();
            let t = wgt * p.powf(alpha) * l1p;
            let dt = wgt * (alpha * p.powf(alpha - 1.0) * l1p - p.powf(alpha) / (1.0 - p));
            (t, dt)
        };
        sum += term;
        *g = if clamped { 0.0 } else { -dterm * inv_n };
    }
    Ok((-sum * inv_n, grad))
}

/// Focal loss applied to heatmap logits through a sigmoid; returns the
/// gradient with respect to the logits.
pub fn focal_loss_logits_grad(
    logits: &Array3<f64>,
    target: &Array3<f64>,
    params: FocalParams,
) -> Result<(f64, Array3<f64>)> {
    let prob = logits.mapv(sigmoid);
    let (loss, mut grad) = focal_loss_grad(&prob, target, params)?;
    grad.zip_mut_with(&prob, |g, &p| *g *= p * (1.0 - p));
    Ok((loss, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean over masked pixels of the channel-summed absolute error.
pub fn masked_l1_loss(pred: &Array3<f64>, targets: &[MaskedTarget]) -> Result<f64> {
    masked_l1_grad(pred, targets).map(|(l, _)| l)
}

/// [`masked_l1_loss`] with its (sub)gradient; `sign(0) = 0`.
pub fn masked_l1_grad(pred: &Array3<f64>, targets: &[MaskedTarget]) -> Result<(f64, Array3<f64>)> {
    if targets.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (ch, h, w) = pred.dim();
    let inv_n = 1.0 / targets.len() as f64;
    let mut grad = Array3::zeros(pred.dim());
    let mut sum = 0.0;
    for t in targets {
        if t.row >= h || t.col >= w {
            return Err(Error::ShapeMismatch(format!(
                "mask pixel ({}, {}) outside {h}x{w}",
                t.row, t.col
            )));
        }
        for &(c, v) in &t.values {
            if c >= ch {
                return Err(Error::ShapeMismatch(format!(
                    "channel {c} outside {ch} channels"
                )));
            }
            let d = pred[[c, t.row, t.col]] - v;
            sum += d.abs();
            grad[[c, t.row, t.col]] += if d > 0.0 {
                inv_n
            } else if d < 0.0 {
                -inv_n
            } else {
                0.0
            };
        }
    }
    Ok((sum * inv_n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionLossWeights {
    pub offset: f64,
    pub size: f64,
}

impl Default for DetectionLossWeights {
    fn default() -> Self {
        DetectionLossWeights {
            offset: 1.0,
            size: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionLoss {
    pub cls: f64,
    pub offset: f64,
    pub size: f64,
    pub total: f64,
}

impl DetectionLoss {
    pub fn combine(cls: f64, offset: f64, size: f64, w: DetectionLossWeights) -> Self {
        DetectionLoss {
            cls,
            offset,
            size,
            total: cls + w.offset * offset + w.size * size,
        }
    }
}

/// `L_cls + λ_off L_off + λ_size L_size` on probability heatmaps.
pub fn total_detection_loss(
    pred: &DetectionMaps,
    targets: &TargetMaps,
    weights: DetectionLossWeights,
) -> Result<DetectionLoss> {
    detection_loss_grad(pred, targets, weights, FocalParams::default()).map(|(l, _)| l)
}

/// Detection loss and its gradient with respect to every predicted map.
pub fn detection_loss_grad(
    pred: &DetectionMaps,
    targets: &TargetMaps,
    weights: DetectionLossWeights,
    focal: FocalParams,
) -> Result<(DetectionLoss, DetectionMaps)> {
    let (cls, g_heat) = focal_loss_grad(&pred.heatmap, &targets.heatmap, focal)?;
    let (off, g_off) = masked_l1_grad(&pred.offset, &targets.offset_targets())?;
    let (size, g_size) = masked_l1_grad(&pred.size, &targets.size_targets())?;
    let grads = DetectionMaps {
        heatmap: g_heat,
        offset: g_off * weights.offset,
        size: g_size * weights.size,
    };
    Ok((DetectionLoss::combine(cls, off, size, weights), grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointLossWeights {
    pub detection: DetectionLossWeights,
    pub keypoint_offset: f64,
    pub allocation: f64,
}

impl Default for KeypointLossWeights {
    fn default() -> Self {
        KeypointLossWeights {
            detection: DetectionLossWeights::default(),
            keypoint_offset: 1.0,
            allocation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointLoss {
    pub detection: DetectionLoss,
    /// Keypoint heatmap focal loss.
    pub heatmap: f64,
    pub offset: f64,
    pub allocation: f64,
    pub total: f64,
}

/// Object losses plus the keypoint heatmap focal loss, keypoint offset L1
/// and centre→keypoint allocation L1.
pub fn keypoint_loss_grad(
    pred: &KeypointMaps,
    det_targets: &TargetMaps,
    kp_targets: &KeypointTargetMaps,
    weights: KeypointLossWeights,
    focal: FocalParams,
) -> Result<(KeypointLoss, KeypointMaps)> {
    let (det, g_det) = detection_loss_grad(&pred.detection, det_targets, weights.detection, focal)?;
    let (heat, g_heat) = focal_loss_grad(&pred.heatmap, &kp_targets.heatmap, focal)?;
    let (off, g_off) = masked_l1_grad(&pred.offset, &kp_targets.offset_targets)?;
    let (alloc, g_alloc) = masked_l1_grad(&pred.allocation, &kp_targets.allocation_targets)?;
    let total = det.total + heat + weights.keypoint_offset * off + weights.allocation * alloc;
    Ok((
        KeypointLoss {
            detection: det,
            heatmap: heat,
            offset: off,
            allocation: alloc,
            total,
        },
        KeypointMaps {
            detection: g_det,
            heatmap: g_heat,
            offset: g_off * weights.keypoint_offset,
            allocation: g_alloc * weights.allocation,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(v: f64) -> Array3<f64> {
        Array3::from_elem((1, 1, 1), v)
    }

    #[test]
    fn focal_hand_values() {
        let p = FocalParams::default();
        let l = focal_loss(&single(0.5), &single(1.0), p).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.17329).abs() < 1e-5);

        // One centre pixel (perfect) plus one non-centre pixel Y=0.5, Ŷ=0.5.
        let pred = array![[[1.0 - 1e-12, 0.5]]];
        let target = array![[[1.0, 0.5]]];
        let l = focal_loss(&pred, &target, FocalParams { eps: 0.0, ..p }).unwrap();
        assert!((l - 0.5f64.powi(4) * 0.25 * 2f64.ln()).abs() < 1e-9);
        assert!((l - 0.010831).abs() < 1e-6);
    }

    #[test]
    fn focal_ideal_limit() {
        let target = array![[[1.0, 0.3, 0.0], [0.0, 1.0, 0.2]]];
        let pred = target.mapv(|y| if y == 1.0 { 1.0 } else { 0.0 });
        let l = focal_loss(&pred, &target, FocalParams::default()).unwrap();
        assert!((0.0..1e-6).contains(&l));
    }

    #[test]
    fn focal_without_centers_errors() {
        assert!(matches!(
            focal_loss(&single(0.5), &single(0.5), FocalParams::default()),
            Err(Error::NoCenters)
        ));
    }

    #[test]
    fn masked_l1_examples() {
        let mut pred = Array3::zeros((2, 3, 3));
        pred[[0, 1, 1]] = 0.5;
        pred[[1, 1, 1]] = 0.75;
        let t = vec![MaskedTarget {
            row: 1,
            col: 1,
            values: vec![(0, 0.25), (1, 0.5)],
        }];
        assert!((masked_l1_loss(&pred, &t).unwrap() - 0.5).abs() < 1e-12);
        pred[[0, 0, 0]] = 100.0;
        assert!((masked_l1_loss(&pred, &t).unwrap() - 0.5).abs() < 1e-12);
        pred[[0, 1, 1]] = 0.25;
        pred[[1, 1, 1]] = 0.5;
        assert_eq!(masked_l1_loss(&pred, &t).unwrap(), 0.0);
        assert!(matches!(masked_l1_loss(&pred, &[]), Err(Error::EmptyMask)));
    }

    #[test]
    fn detection_loss_weighting() {
        let w = DetectionLossWeights::default();
        assert!((DetectionLoss::combine(1.0, 2.0, 3.0, w).total - 3.3).abs() < 1e-12);
        assert_eq!(DetectionLoss::combine(0.0, 0.0, 0.0, w).total, 0.0);
        let zero = DetectionLossWeights {
            offset: 0.0,
            size: 0.0,
        };
        assert_eq!(DetectionLoss::combine(0.7, 2.0, 3.0, zero).total, 0.7);
    }
}
