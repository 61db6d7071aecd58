use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BBox, KeypointInstance};

use super::{DetectionMaps, KeypointMaps};

/// Minimum IoU a corner-shifted box must keep for [`gaussian_radius`].
pub const DEFAULT_MIN_IOU: f64 = 0.7;

/// Largest corner shift `r` for which a `w × h` box keeps IoU ≥ `min_iou`
/// with the original, taking the tightest of three cases: one corner moved
/// in and the other out (translation), both corners moved inwards, both
/// outwards.
pub fn gaussian_radius(w: f64, h: f64, min_iou: f64) -> f64 {
    let t = min_iou;
    let s = w + h;
    let area = w * h;
    // (w-r)(h-r) / (2wh - (w-r)(h-r)) >= t
    let r1 = (s - (s * s - 4.0 * area * (1.0 - t) / (1.0 + t)).max(0.0).sqrt()) / 2.0;
    // (w-2r)(h-2r) / wh >= t
    let r2 = (2.0 * s - (4.0 * s * s - 16.0 * area * (1.0 - t)).max(0.0).sqrt()) / 8.0;
    // wh / ((w+2r)(h+2r)) >= t
    let r3 = (-2.0 * t * s
        + (4.0 * t * t * s * s + 16.0 * t * (1.0 - t) * area)
            .max(0.0)
            .sqrt())
        / (8.0 * t);
    r1.min(r2).min(r3).max(0.0)
}

/// Unnormalised Gaussian `exp(-d²/(2σ²))` centred on an integer pixel, with
/// σ = radius / 3. A zero radius degenerates to a single unit pixel.
fn splat_max(map: &mut Array3<f64>, channel: usize, row: usize, col: usize, radius: f64) {
    let (_, h, w) = map.dim();
    let sigma = radius / 3.0;
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - row as f64).powi(2) + (c as f64 - col as f64).powi(2);
            let v = if d2 == 0.0 {
                1.0
            } else if sigma > 0.0 {
                (-d2 / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            };
            let cell = &mut map[[channel, r, c]];
            *cell = cell.max(v).min(1.0);
        }
    }
}

/// One regression target attached to a single feature-map pixel: the listed
/// `(channel, value)` pairs are supervised, every other channel is not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedTarget {
    pub row: usize,
    pub col: usize,
    pub values: Vec<(usize, f64)>,
}

/// A ground-truth object center on the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub row: usize,
    pub col: usize,
    pub class_id: u16,
    /// Fractional remainder of the center, `(x, y)`, each in `[0, 1)`.
    pub offset: [f64; 2],
    /// Box extent `(w, h)` in feature units.
    pub size: [f64; 2],
    /// Continuous center `(x, y)` in feature units.
    pub point: [f64; 2],
}

/// Detection targets: class heatmap, offset map, size map and the centre
/// mask. Map shapes are `(channels, H/R, W/R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub stride: usize,
    pub heatmap: Array3<f64>,
    pub offset: Array3<f64>,
    pub size: Array3<f64>,
    pub centers: Vec<Center>,
}

/// Feature-map extent for an image dimension at the given stride.
pub fn feature_dim(image_dim: usize, stride: usize) -> usize {
    image_dim.div_ceil(stride)
}

fn locate(
    cx: f64,
    cy: f64,
    stride: usize,
    fh: usize,
    fw: usize,
) -> Result<(usize, usize, [f64; 2], [f64; 2])> {
    let r = stride as f64;
    let (px, py) = (cx / r, cy / r);
    if !(px >= 0.0 && py >= 0.0 && px < fw as f64 && py < fh as f64) {
        return Err(Error::InvalidInput(format!(
            "point ({cx}, {cy}) lies outside the image"
        )));
    }
    let (col, row) = (px.floor(), py.floor());
    Ok((row as usize, col as usize, [px - col, py - row], [px, py]))
}

impl TargetMaps {
    pub fn empty(num_classes: usize, fh: usize, fw: usize, stride: usize) -> Self {
        TargetMaps {
            stride,
            heatmap: Array3::zeros((num_classes, fh, fw)),
            offset: Array3::zeros((2, fh, fw)),
            size: Array3::zeros((2, fh, fw)),
            centers: Vec::new(),
        }
    }

    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn offset_targets(&self) -> Vec<MaskedTarget> {
        self.centers
            .iter()
            .map(|c| MaskedTarget {
                row: c.row,
                col: c.col,
                values: vec![(0, c.offset[0]), (1, c.offset[1])],
            })
            .collect()
    }

    pub fn size_targets(&self) -> Vec<MaskedTarget> {
        self.centers
            .iter()
            .map(|c| MaskedTarget {
                row: c.row,
                col: c.col,
                values: vec![(0, c.size[0]), (1, c.size[1])],
            })
            .collect()
    }

    /// Prediction maps a perfect model would output for these targets.
    pub fn ideal_prediction(&self) -> DetectionMaps {
        DetectionMaps {
            heatmap: self.heatmap.clone(),
            offset: self.offset.clone(),
            size: self.size.clone(),
        }
    }
}

/// Encodes boxes into CenterNet targets on a `ceil(H/R) × ceil(W/R)` grid.
///
/// Each class heatmap is the pixelwise maximum of per-box Gaussians around
/// the quantised centres; offsets and sizes are written at the centre
/// pixels only.
pub fn encode_detection_targets(
    boxes: &[BBox],
    num_classes: usize,
    image_height: usize,
    image_width: usize,
    stride: usize,
) -> Result<TargetMaps> {
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be positive".into()));
    }
    let fh = feature_dim(image_height, stride);
    let fw = feature_dim(image_width, stride);
    let mut maps = TargetMaps::empty(num_classes, fh, fw, stride);
    let r = stride as f64;
    for b in boxes {
        let class = b.class_id as usize;
        if class >= num_classes {
            return Err(Error::InvalidLabel {
                label: b.class_id,
                num_classes,
            });
        }
        let (cx, cy) = b.center();
        let (row, col, offset, point) = locate(cx, cy, stride, fh, fw)?;
        let size = [b.w / r, b.h / r];
        splat_max(
            &mut maps.heatmap,
            class,
            row,
            col,
            gaussian_radius(size[0], size[1], DEFAULT_MIN_IOU),
        );
        for ch in 0..2 {
            maps.offset[[ch, row, col]] = offset[ch];
            maps.size[[ch, row, col]] = size[ch];
        }
        maps.centers.push(Center {
            row,
            col,
            class_id: b.class_id,
            offset,
            size,
            point,
        });
    }
    Ok(maps)
}

/// Keypoint targets: per-keypoint heatmap, keypoint offset map and the
/// centre→keypoint allocation map (`2K` channels, `(dx, dy)` per keypoint,
/// in feature units relative to the continuous object centre).
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTargetMaps {
    pub heatmap: Array3<f64>,
    pub offset: Array3<f64>,
    pub allocation: Array3<f64>,
    /// Offset supervision at each visible keypoint's pixel.
    pub offset_targets: Vec<MaskedTarget>,
    /// Allocation supervision at each object centre, visible keypoints only.
    pub allocation_targets: Vec<MaskedTarget>,
}

impl KeypointTargetMaps {
    pub fn num_keypoints(&self) -> usize {
        self.heatmap.dim().0
    }

    pub fn num_centers(&self) -> usize {
        self.offset_targets.len()
    }

    pub fn ideal_prediction(&self, detection: &TargetMaps) -> KeypointMaps {
        KeypointMaps {
            detection: detection.ideal_prediction(),
            heatmap: self.heatmap.clone(),
            offset: self.offset.clone(),
            allocation: self.allocation.clone(),
        }
    }
}

/// Encodes keypoint instances. Object targets come from the owning boxes;
/// keypoint heatmaps use the owning box's Gaussian radius. Keypoints that
/// are not visible are left out of every map and mask.
pub fn encode_keypoint_targets(
    instances: &[KeypointInstance],
    num_keypoints: usize,
    num_classes: usize,
    image_height: usize,
    image_width: usize,
    stride: usize,
) -> Result<(KeypointTargetMaps, TargetMaps)> {
    let boxes: Vec<BBox> = instances.iter().map(|i| i.bbox).collect();
    let det = encode_detection_targets(&boxes, num_classes, image_height, image_width, stride)?;
    let (_, fh, fw) = det.heatmap.dim();
    let mut kp = KeypointTargetMaps {
        heatmap: Array3::zeros((num_keypoints, fh, fw)),
        offset: Array3::zeros((2, fh, fw)),
        allocation: Array3::zeros((2 * num_keypoints, fh, fw)),
        offset_targets: Vec::new(),
        allocation_targets: Vec::new(),
    };
    for (inst, center) in instances.iter().zip(&det.centers) {
        if inst.keypoints.len() != num_keypoints {
            return Err(Error::ShapeMismatch(format!(
                "instance has {} keypoints, dataset has {num_keypoints}",
                inst.keypoints.len()
            )));
        }
        let radius = gaussian_radius(center.size[0], center.size[1], DEFAULT_MIN_IOU);
        let mut alloc = Vec::new();
        for (j, k) in inst.keypoints.iter().enumerate() {
            if !k.is_visible() {
                continue;
            }
            let (row, col, offset, point) = locate(k.x, k.y, stride, fh, fw)?;
            splat_max(&mut kp.heatmap, j, row, col, radius);
            kp.offset[[0, row, col]] = offset[0];
            kp.offset[[1, row, col]] = offset[1];
            kp.offset_targets.push(MaskedTarget {
                row,
                col,
                values: vec![(0, offset[0]), (1, offset[1])],
            });
            let d = [point[0] - center.point[0], point[1] - center.point[1]];
            kp.allocation[[2 * j, center.row, center.col]] = d[0];
            kp.allocation[[2 * j + 1, center.row, center.col]] = d[1];
            alloc.push((2 * j, d[0]));
            alloc.push((2 * j + 1, d[1]));
        }
        if !alloc.is_empty() {
            kp.allocation_targets.push(MaskedTarget {
                row: center.row,
                col: center.col,
                values: alloc,
            });
        }
    }
    Ok((kp, det))
}
