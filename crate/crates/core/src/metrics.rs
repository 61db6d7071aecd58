//! Evaluation metrics for the four task types: mIoU, COCO-style box mAP,
//! keypoint AP at OKS 0.5, depth RMSE and δ-accuracy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    box_iou, BBox, DepthGrid, Detection, Direction, KeypointInstance, LabelGrid, TaskType,
};

/// One evaluated metric together with its optimisation direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub task_type: TaskType,
    pub value: f64,
    pub direction: Direction,
}

impl MetricValue {
    pub fn new(task_type: TaskType, value: f64) -> Self {
        MetricValue {
            task_type,
            value,
            direction: task_type.direction(),
        }
    }

    /// True when `self` is strictly better than `other`.
    pub fn better_than(&self, other: &MetricValue) -> bool {
        match self.direction {
            Direction::HigherBetter => self.value > other.value,
            Direction::LowerBetter => self.value < other.value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

/// IoU thresholds 0.50:0.05:0.95.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Default per-keypoint OKS constant for toy data.
pub const DEFAULT_KEYPOINT_SIGMA: f64 = 0.1;

/// Row-major `num_classes × num_classes` pixel counts; `counts[i][j]` is the
/// number of pixels with ground truth `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    /// Adds the pixels of one (prediction, ground truth) pair.
    pub fn accumulate(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        if pred.width != gt.width || pred.height != gt.height {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        gt.validate(self.num_classes)?;
        let k = self.num_classes;
        for (i, (&g, &p)) in gt.labels.iter().zip(&pred.labels).enumerate() {
            if gt.is_ignored(i) {
                continue;
            }
            if p as usize >= k {
                return Err(Error::InvalidLabel {
                    label: p,
                    num_classes: k,
                });
            }
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class IoU; `None` for classes absent from both ground truth and
    /// prediction.
    pub fn class_ious(&self) -> Vec<Option<f64>> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..k).map(|j| self.get(c, j)).sum();
                let col: u64 = (0..k).map(|i| self.get(i, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn mean_iou(&self) -> Result<MeanIou> {
        if self.total() == 0 {
            return Err(Error::NoEvaluablePixels);
        }
        let per_class = self.class_ious();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        Ok(MeanIou {
            metric: MetricValue::new(TaskType::SemanticSegmentation, mean),
            per_class,
        })
    }
}

pub fn confusion_matrix(
    pred: &LabelGrid,
    gt: &LabelGrid,
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::zeros(num_classes);
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanIou {
    pub metric: MetricValue,
    pub per_class: Vec<Option<f64>>,
}

pub fn mean_iou(pred: &LabelGrid, gt: &LabelGrid, num_classes: usize) -> Result<MeanIou> {
    confusion_matrix(pred, gt, num_classes)?.mean_iou()
}

/// Dataset-level mIoU from one confusion matrix pooled over all images.
pub fn mean_iou_many<'a, I>(pairs: I, num_classes: usize) -> Result<MeanIou>
where
    I: IntoIterator<Item = (&'a LabelGrid, &'a LabelGrid)>,
{
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (pred, gt) in pairs {
        cm.accumulate(pred, gt)?;
    }
    cm.mean_iou()
}

/// Area under the precision envelope for a score-ordered sequence of
/// true/false-positive flags.
fn envelope_ap(tp_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut points = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += usize::from(hit);
        points.push(PrPoint {
            precision: tp as f64 / (i + 1) as f64,
            recall: tp as f64 / num_gt as f64,
        });
    }
    // Backward pass turns precision into its monotone envelope.
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].precision = points[i].precision.max(points[i + 1].precision);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in &points {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * p.precision;
            prev_recall = p.recall;
        }
    }
    ap
}

/// Greedy matching of scored predictions against ground truth in each image.
///
/// Predictions are visited in descending score order (ties by image, then
/// input position); each takes the unmatched ground truth with the highest
/// similarity at or above `threshold`. Returns the TP flag of every visited
/// prediction and the total ground-truth count.
fn greedy_match<P, G>(
    preds: &[Vec<P>],
    gts: &[Vec<G>],
    threshold: f64,
    score: impl Fn(&P) -> f64,
    similarity: impl Fn(&P, &G) -> f64,
) -> (Vec<bool>, usize) {
    let mut order: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(img, ds)| (0..ds.len()).map(move |d| (img, d)))
        .collect();
    order.sort_by(|&(ia, da), &(ib, db)| {
        score(&preds[ib][db])
            .total_cmp(&score(&preds[ia][da]))
            .then((ia, da).cmp(&(ib, db)))
    });
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let flags = order
        .into_iter()
        .map(|(img, d)| {
            let Some(img_gts) = gts.get(img) else {
                return false;
            };
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in img_gts.iter().enumerate() {
                if taken[img][g] {
                    continue;
                }
                let s = similarity(&preds[img][d], gt);
                if s >= threshold && best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((g, s));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[img][g] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (flags, gts.iter().map(Vec::len).sum())
}

/// All-point interpolated AP for one class at one IoU threshold.
///
/// `dets[i]` and `gts[i]` hold the detections and ground truth of image `i`;
/// boxes of other classes are ignored. Returns `None` when the class has
/// neither ground truth nor detections, and `Some(0.0)` when it has
/// detections but no ground truth.
pub fn average_precision(
    dets: &[Vec<Detection>],
    gts: &[Vec<BBox>],
    iou_threshold: f64,
    class_id: u16,
) -> Option<f64> {
    let filter = |v: &[Vec<BBox>]| -> Vec<Vec<BBox>> {
        v.iter()
            .map(|img| {
                img.iter()
                    .filter(|b| b.class_id == class_id)
                    .copied()
                    .collect()
            })
            .collect()
    };
    let dets = filter(dets);
    let gts = filter(gts);
    let (flags, num_gt) = greedy_match(&dets, &gts, iou_threshold, |d| d.score, box_iou);
    if num_gt == 0 && flags.is_empty() {
        return None;
    }
    Some(envelope_ap(&flags, num_gt))
}

fn classes_of(dets: &[Vec<BBox>], gts: &[Vec<BBox>]) -> BTreeSet<u16> {
    dets.iter()
        .chain(gts)
        .flatten()
        .map(|b| b.class_id)
        .collect()
}

/// Box mAP averaged over IoU thresholds 0.50:0.05:0.95 and over classes.
pub fn coco_map(dets: &[Vec<Detection>], gts: &[Vec<BBox>]) -> Result<MetricValue> {
    let classes = classes_of(dets, gts);
    if classes.is_empty() {
        return Err(Error::InvalidInput(
            "no ground truth and no detections".into(),
        ));
    }
    let thresholds = coco_iou_thresholds();
    let mut per_class = Vec::with_capacity(classes.len());
    for &c in &classes {
        let aps: Vec<f64> = thresholds
            .iter()
            .filter_map(|&t| average_precision(dets, gts, t, c))
            .collect();
        per_class.push(aps.iter().sum::<f64>() / aps.len() as f64);
    }
    let value = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(MetricValue::new(TaskType::ObjectDetection, value))
}

/// Object keypoint similarity: mean over visible ground-truth keypoints of
/// `exp(-d² / (2 s² k²))`.
pub fn oks(
    pred: &KeypointInstance,
    gt: &KeypointInstance,
    object_scale: f64,
    k_sigmas: &[f64],
) -> Result<f64> {
    let k = gt.keypoints.len();
    if pred.keypoints.len() != k || k_sigmas.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "keypoint counts: pred {}, gt {}, sigmas {}",
            pred.keypoints.len(),
            k,
            k_sigmas.len()
        )));
    }
    if !(object_scale > 0.0) {
        return Err(Error::InvalidInput(format!(
            "object scale {object_scale} must be positive"
        )));
    }
    let mut sum = 0.0;
    let mut visible = 0usize;
    for ((p, g), &ks) in pred.keypoints.iter().zip(&gt.keypoints).zip(k_sigmas) {
        if !g.is_visible() {
            continue;
        }
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        sum += (-d2 / (2.0 * object_scale * object_scale * ks * ks)).exp();
        visible += 1;
    }
    if visible == 0 {
        return Err(Error::NoVisibleKeypoints);
    }
    Ok(sum / visible as f64)
}

/// Object scale used for OKS: square root of the ground-truth box area.
pub fn instance_scale(gt: &KeypointInstance) -> f64 {
    gt.bbox.area().sqrt()
}

/// Keypoint AP with OKS ≥ 0.5 as the match predicate, averaged over the
/// classes of the owning boxes. Ground-truth instances without visible
/// keypoints are not evaluated.
pub fn keypoint_ap50(
    preds: &[Vec<KeypointInstance>],
    gts: &[Vec<KeypointInstance>],
    k_sigmas: &[f64],
) -> Result<MetricValue> {
    let gts: Vec<Vec<KeypointInstance>> = gts
        .iter()
        .map(|img| {
            img.iter()
                .filter(|g| g.keypoints.iter().any(|k| k.is_visible()))
                .cloned()
                .collect()
        })
        .collect();
    let classes: BTreeSet<u16> = preds
        .iter()
        .chain(&gts)
        .flatten()
        .map(|i| i.bbox.class_id)
        .collect();
    if classes.is_empty() {
        return Err(Error::InvalidInput(
            "no ground truth and no predictions".into(),
        ));
    }
    let mut aps = Vec::with_capacity(classes.len());
    for &c in &classes {
        let of_class = |v: &[Vec<KeypointInstance>]| -> Vec<Vec<KeypointInstance>> {
            v.iter()
                .map(|img| {
                    img.iter()
                        .filter(|i| i.bbox.class_id == c)
                        .cloned()
                        .collect()
                })
                .collect()
        };
        let p = of_class(preds);
        let g = of_class(&gts);
        let (flags, num_gt) = greedy_match(
            &p,
            &g,
            0.5,
            |i| i.score,
            |pi, gi| oks(pi, gi, instance_scale(gi), k_sigmas).unwrap_or(0.0),
        );
        aps.push(envelope_ap(&flags, num_gt));
    }
    let value = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok(MetricValue::new(TaskType::KeypointDetection, value))
}

fn depth_pairs<'a>(
    pred: &'a DepthGrid,
    gt: &'a DepthGrid,
) -> Result<impl Iterator<Item = (usize, f64, f64)> + 'a> {
    pred.same_shape(gt)?;
    Ok(gt
        .valid
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(move |(i, _)| (i, pred.depth[i], gt.depth[i])))
}

/// Linear RMSE over the ground-truth valid pixels.
pub fn depth_rmse(pred: &DepthGrid, gt: &DepthGrid) -> Result<MetricValue> {
    depth_rmse_many([(pred, gt)])
}

/// RMSE pooled over all valid pixels of several images.
pub fn depth_rmse_many<'a, I>(pairs: I) -> Result<MetricValue>
where
    I: IntoIterator<Item = (&'a DepthGrid, &'a DepthGrid)>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pred, gt) in pairs {
        for (_, p, g) in depth_pairs(pred, gt)? {
            sum += (p - g).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoEvaluablePixels);
    }
    Ok(MetricValue::new(
        TaskType::DepthEstimation,
        (sum / n as f64).sqrt(),
    ))
}

/// Fraction of valid pixels with `max(pred/gt, gt/pred) < threshold`.
/// Reported with higher-better direction.
pub fn depth_delta(pred: &DepthGrid, gt: &DepthGrid, threshold: f64) -> Result<MetricValue> {
    let mut hits = 0usize;
    let mut n = 0usize;
    for (i, p, g) in depth_pairs(pred, gt)? {
        if !(p > 0.0) {
            return Err(Error::NonPositiveDepth { index: i, value: p });
        }
        if !(g > 0.0) {
            return Err(Error::NonPositiveDepth { index: i, value: g });
        }
        if (p / g).max(g / p) < threshold {
            hits += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoEvaluablePixels);
    }
    Ok(MetricValue {
        task_type: TaskType::DepthEstimation,
        value: hits as f64 / n as f64,
        direction: Direction::HigherBetter,
    })
}
