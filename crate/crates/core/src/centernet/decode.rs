use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::types::{box_iou, BBox, Detection, Keypoint, KeypointInstance};

use super::{DetectionMaps, KeypointMaps};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub top_t: usize,
    pub stride: usize,
    pub score_threshold: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            top_t: 100,
            stride: 4,
            score_threshold: 0.0,
        }
    }
}

/// Default IoU above which [`nms`] suppresses a lower-scoring box.
pub const DEFAULT_NMS_IOU: f64 = 0.3;

/// Smallest decoded box extent; keeps degenerate size predictions valid.
const MIN_EXTENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Peak {
    channel: usize,
    row: usize,
    col: usize,
    score: f64,
}

/// Pixels strictly greater than all of their (up to 8) neighbours.
fn strict_local_maxima(map: ArrayView2<'_, f64>) -> Vec<(usize, usize, f64)> {
    let (h, w) = map.dim();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = map[[r, c]];
            let is_peak = (r.saturating_sub(1)..(r + 2).min(h))
                .flat_map(|rr| (c.saturating_sub(1)..(c + 2).min(w)).map(move |cc| (rr, cc)))
                .filter(|&p| p != (r, c))
                .all(|(rr, cc)| v > map[[rr, cc]]);
            if is_peak {
                out.push((r, c, v));
            }
        }
    }
    out
}

/// Top-`t` strict local maxima over all channels, ordered by descending
/// score with ties broken by `(channel, row, col)`.
fn top_peaks(heatmap: &Array3<f64>, t: usize, threshold: f64) -> Vec<Peak> {
    let mut peaks: Vec<Peak> = heatmap
        .axis_iter(Axis(0))
        .enumerate()
        .flat_map(|(channel, m)| {
            strict_local_maxima(m)
                .into_iter()
                .map(move |(row, col, score)| Peak {
                    channel,
                    row,
                    col,
                    score,
                })
        })
        .collect();
    peaks.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.channel, a.row, a.col).cmp(&(b.channel, b.row, b.col)))
    });
    peaks.truncate(t);
    peaks.retain(|p| p.score >= threshold);
    peaks
}

fn peak_box(maps: &DetectionMaps, p: &Peak, stride: usize) -> Detection {
    let r = stride as f64;
    let cx = (p.col as f64 + maps.offset[[0, p.row, p.col]]) * r;
    let cy = (p.row as f64 + maps.offset[[1, p.row, p.col]]) * r;
    let w = (maps.size[[0, p.row, p.col]] * r).max(MIN_EXTENT);
    let h = (maps.size[[1, p.row, p.col]] * r).max(MIN_EXTENT);
    BBox {
        x: cx - w / 2.0,
        y: cy - h / 2.0,
        w,
        h,
        class_id: p.channel as u16,
        score: p.score,
    }
}

/// Decodes detection maps: strict 3×3 peaks, top-T across classes, centre
/// from pixel + offset, extent from the size map, both scaled by the stride.
pub fn decode_detections(maps: &DetectionMaps, params: DecodeParams) -> Vec<Detection> {
    top_peaks(&maps.heatmap, params.top_t, params.score_threshold)
        .iter()
        .map(|p| peak_box(maps, p, params.stride))
        .collect()
}

/// Greedy per-class non-maximum suppression. Survivors keep their input
/// order; boxes with IoU ≥ `iou_threshold` against a higher-scoring kept
/// box of the same class are dropped.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut keep = vec![false; dets.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].class_id == dets[i].class_id && box_iou(&dets[k], &dets[i]) >= iou_threshold
        });
        if !suppressed {
            keep[i] = true;
            kept.push(i);
        }
    }
    dets.iter()
        .zip(keep)
        .filter_map(|(d, k)| k.then_some(*d))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointDecodeParams {
    pub detection: DecodeParams,
    /// Minimum keypoint heatmap score for a candidate location.
    pub keypoint_threshold: f64,
}

impl Default for KeypointDecodeParams {
    fn default() -> Self {
        KeypointDecodeParams {
            detection: DecodeParams::default(),
            keypoint_threshold: 0.1,
        }
    }
}

/// Decodes keypoint instances.
///
/// For each decoded object the allocation map gives an initial guess per
/// keypoint (centre + displacement). Candidates are strict peaks of the
/// keypoint heatmap above the threshold, refined by the keypoint offset
/// map. The final keypoint is the candidate nearest the guess that lies
/// inside the object box, or the guess itself when there is none.
pub fn decode_keypoints(
    maps: &KeypointMaps,
    params: KeypointDecodeParams,
) -> Vec<KeypointInstance> {
    let r = params.detection.stride as f64;
    let num_kp = maps.heatmap.dim().0;
    let candidates: Vec<Vec<(f64, f64)>> = maps
        .heatmap
        .axis_iter(Axis(0))
        .map(|m| {
            strict_local_maxima(m)
                .into_iter()
                .filter(|&(_, _, s)| s >= params.keypoint_threshold)
                .map(|(row, col, _)| {
                    (
                        (col as f64 + maps.offset[[0, row, col]]) * r,
                        (row as f64 + maps.offset[[1, row, col]]) * r,
                    )
                })
                .collect()
        })
        .collect();
    let d = &maps.detection;
    top_peaks(
        &d.heatmap,
        params.detection.top_t,
        params.detection.score_threshold,
    )
    .iter()
    .map(|p| {
        let bbox = peak_box(d, p, params.detection.stride);
        let fx = p.col as f64 + d.offset[[0, p.row, p.col]];
        let fy = p.row as f64 + d.offset[[1, p.row, p.col]];
        let keypoints = (0..num_kp)
            .map(|j| {
                let gx = (fx + maps.allocation[[2 * j, p.row, p.col]]) * r;
                let gy = (fy + maps.allocation[[2 * j + 1, p.row, p.col]]) * r;
                let best = candidates[j]
                    .iter()
                    .filter(|&&(x, y)| bbox.contains(x, y))
                    .min_by(|a, b| {
                        let da = (a.0 - gx).powi(2) + (a.1 - gy).powi(2);
                        let db = (b.0 - gx).powi(2) + (b.1 - gy).powi(2);
                        da.total_cmp(&db)
                    });
                let (x, y) = best.copied().unwrap_or((gx, gy));
                Keypoint::visible(x, y)
            })
            .collect();
        KeypointInstance {
            keypoints,
            bbox,
            score: p.score,
        }
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centernet::targets::encode_detection_targets;

    fn maps(heat: Array3<f64>) -> DetectionMaps {
        let (_, h, w) = heat.dim();
        DetectionMaps {
            heatmap: heat,
            offset: Array3::zeros((2, h, w)),
            size: Array3::ones((2, h, w)),
        }
    }

    #[test]
    fn roundtrip_two_boxes() {
        let boxes = [
            BBox::new(3.1, 4.7, 10.0, 6.0, 0).unwrap(),
            BBox::new(30.2, 22.9, 5.5, 8.25, 1).unwrap(),
        ];
        let t = encode_detection_targets(&boxes, 2, 40, 48, 4).unwrap();
        let params = DecodeParams {
            top_t: 100,
            stride: 4,
            score_threshold: 0.5,
        };
        let mut out = decode_detections(&t.ideal_prediction(), params);
        out.sort_by_key(|d| d.class_id);
        assert_eq!(out.len(), 2);
        for (d, b) in out.iter().zip(&boxes) {
            for (u, v) in [(d.x, b.x), (d.y, b.y), (d.w, b.w), (d.h, b.h)] {
                assert!((u - v).abs() < 1e-9, "{d:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn uniform_heatmap_is_empty() {
        let m = maps(Array3::from_elem((2, 5, 5), 0.05));
        let p = DecodeParams {
            score_threshold: 0.1,
            ..DecodeParams::default()
        };
        assert!(decode_detections(&m, p).is_empty());
    }

    #[test]
    fn tie_broken_by_lowest_index() {
        let mut heat = Array3::zeros((2, 6, 6));
        heat[[1, 1, 1]] = 0.8;
        heat[[0, 4, 4]] = 0.8;
        heat[[0, 1, 4]] = 0.8;
        let p = DecodeParams {
            top_t: 1,
            stride: 1,
            score_threshold: 0.0,
        };
        let out = decode_detections(&maps(heat), p);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].class_id, 0);
        assert_eq!(out[0].center(), (4.0, 1.0));
    }

    #[test]
    fn plateau_is_not_a_peak() {
        let mut heat = Array3::zeros((1, 4, 4));
        heat[[0, 1, 1]] = 0.9;
        heat[[0, 1, 2]] = 0.9;
        assert!(decode_detections(&maps(heat), DecodeParams::default()).is_empty());
    }

    fn sb(x: f64, class: u16, score: f64) -> Detection {
        BBox::scored(x, 0.0, 3.0, 3.0, class, score).unwrap()
    }

    #[test]
    fn nms_examples() {
        // Shift by 1 of a width-3 box: IoU = 2·3 / (18 - 6) = 0.5.
        let a = sb(0.0, 0, 0.8);
        let b = sb(1.0, 0, 0.9);
        assert!((box_iou(&a, &b) - 0.5).abs() < 1e-12);
        assert_eq!(nms(&[a, b], 0.3), vec![b]);

        let c = sb(1.0, 1, 0.9);
        assert_eq!(nms(&[a, c], 0.3), vec![a, c]);

        let d = sb(7.0, 0, 0.1);
        assert_eq!(nms(&[a, b, d], 1.0), vec![a, b, d]);
        assert_eq!(nms(&[a, a], 1.0).len(), 1);
    }
}
