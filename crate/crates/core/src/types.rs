//! Shared value types: task kinds, boxes, label/depth grids, keypoint
//! instances and per-dataset embedding sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default embedding width of a [`FeatureSet`] (channels of the pooled
/// backbone output).
pub const DEFAULT_FEATURE_DIM: usize = 720;

/// Whether larger metric values are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskType {
    SemanticSegmentation,
    ObjectDetection,
    KeypointDetection,
    DepthEstimation,
}

impl TaskType {
    pub const ALL: [TaskType; 4] = [
        TaskType::SemanticSegmentation,
        TaskType::ObjectDetection,
        TaskType::KeypointDetection,
        TaskType::DepthEstimation,
    ];

    /// Direction of the task's headline metric (mIoU, mAP, AP50 at OKS,
    /// RMSE).
    pub fn direction(self) -> Direction {
        match self {
            TaskType::DepthEstimation => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::SemanticSegmentation => "semantic-segmentation",
            TaskType::ObjectDetection => "object-detection",
            TaskType::KeypointDetection => "keypoint-detection",
            TaskType::DepthEstimation => "depth-estimation",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            TaskType::SemanticSegmentation => "seg",
            TaskType::ObjectDetection => "det",
            TaskType::KeypointDetection => "kp",
            TaskType::DepthEstimation => "depth",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str() == s || t.short() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown task type {s:?}")))
    }
}

/// Axis-aligned box anchored at its top-left corner. Ground-truth boxes
/// carry `score = 1.0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: u16,
    pub score: f64,
}

/// A scored prediction.
pub type Detection = BBox;

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, class_id: u16) -> Result<Self> {
        Self::scored(x, y, w, h, class_id, 1.0)
    }

    pub fn scored(x: f64, y: f64, w: f64, h: f64, class_id: u16, score: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox { w, h });
        }
        Ok(BBox {
            x,
            y,
            w,
            h,
            class_id,
            score,
        })
    }

    /// Box of extent `w × h` centred on `(cx, cy)`.
    pub fn from_center(
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        class_id: u16,
        score: f64,
    ) -> Result<Self> {
        Self::scored(cx - w / 2.0, cy - h / 2.0, w, h, class_id, score)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        box_iou(self, other)
    }
}

/// Intersection over union of two boxes; 0 when they are disjoint.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    // Areas are taken from corner differences so that identical boxes
    // give inter == union bit for bit.
    let (ax2, ay2) = (a.x + a.w, a.y + a.h);
    let (bx2, by2) = (b.x + b.w, b.y + b.h);
    let ix = ax2.min(bx2) - a.x.max(b.x);
    let iy = ay2.min(by2) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = (ax2 - a.x) * (ay2 - a.y) + (bx2 - b.x) * (by2 - b.y) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Per-pixel class labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGrid {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
    pub ignore_id: u16,
}

impl LabelGrid {
    pub const DEFAULT_IGNORE: u16 = u16::MAX;

    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        Self::with_ignore(width, height, labels, Self::DEFAULT_IGNORE)
    }

    pub fn with_ignore(
        width: usize,
        height: usize,
        labels: Vec<u16>,
        ignore_id: u16,
    ) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "label grid {height}x{width} with {} labels",
                labels.len()
            )));
        }
        Ok(LabelGrid {
            width,
            height,
            labels,
            ignore_id,
        })
    }

    pub fn filled(width: usize, height: usize, label: u16) -> Self {
        LabelGrid {
            width,
            height,
            labels: vec![label; width * height],
            ignore_id: Self::DEFAULT_IGNORE,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn is_ignored(&self, idx: usize) -> bool {
        self.labels[idx] == self.ignore_id
    }

    /// Checks that every label is below `num_classes` or is the ignore id.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l != self.ignore_id && l as usize >= num_classes)
        {
            Some(&label) => Err(Error::InvalidLabel { label, num_classes }),
            None => Ok(()),
        }
    }
}

/// Per-pixel depth with a validity mask, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthGrid {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthGrid {
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        let valid = vec![true; depth.len()];
        Self::with_mask(width, height, depth, valid)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        depth: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || depth.len() != width * height || valid.len() != depth.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "depth grid {height}x{width} with {} values / {} mask entries",
                depth.len(),
                valid.len()
            )));
        }
        if let Some((i, &d)) = depth
            .iter()
            .enumerate()
            .find(|&(i, &d)| valid[i] && (d < 0.0 || !d.is_finite()))
        {
            return Err(Error::NonPositiveDepth { index: i, value: d });
        }
        Ok(DepthGrid {
            width,
            height,
            depth,
            valid,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub(crate) fn same_shape(&self, other: &DepthGrid) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Absent,
    Present,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visibility: Visibility,
}

impl Keypoint {
    pub fn visible(x: f64, y: f64) -> Self {
        Keypoint {
            x,
            y,
            visibility: Visibility::Present,
        }
    }

    pub fn absent() -> Self {
        Keypoint {
            x: 0.0,
            y: 0.0,
            visibility: Visibility::Absent,
        }
    }

    pub fn is_visible(&self) -> bool {
        self.visibility == Visibility::Present
    }
}

/// One object with its `K` keypoints. `K` is fixed per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointInstance {
    pub keypoints: Vec<Keypoint>,
    pub bbox: BBox,
    pub score: f64,
}

/// A dataset's per-image embedding vectors, stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub dataset_id: String,
    pub domain_label: String,
    pub dim: usize,
    pub vectors: Vec<f32>,
    pub sample_seed: u64,
}

impl FeatureSet {
    pub fn new(
        dataset_id: impl Into<String>,
        domain_label: impl Into<String>,
        dim: usize,
        vectors: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 || vectors.is_empty() {
            return Err(Error::EmptyFeatureSet);
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values is not a multiple of dimension {dim}",
                vectors.len()
            )));
        }
        Ok(FeatureSet {
            dataset_id: dataset_id.into(),
            domain_label: domain_label.into(),
            dim,
            vectors,
            sample_seed: 0,
        })
    }

    pub fn from_rows(
        dataset_id: impl Into<String>,
        domain_label: impl Into<String>,
        rows: &[Vec<f32>],
    ) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyFeatureSet)?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch(format!(
                "row of length {} in a set of dimension {dim}",
                bad.len()
            )));
        }
        Self::new(dataset_id, domain_label, dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h, 0).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(box_iou(&a, &a), 1.0);
        assert_eq!(box_iou(&a, &b(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((box_iou(&a, &b(1.0, 1.0, 2.0, 2.0)) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0, 0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0, 0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0, 0).is_err());
    }

    #[test]
    fn task_direction() {
        assert_eq!(
            TaskType::DepthEstimation.direction(),
            Direction::LowerBetter
        );
        for t in &TaskType::ALL[..3] {
            assert_eq!(t.direction(), Direction::HigherBetter);
        }
        assert_eq!(
            "seg".parse::<TaskType>().unwrap(),
            TaskType::SemanticSegmentation
        );
    }

    #[test]
    fn label_grid_validation() {
        let g = LabelGrid::new(2, 1, vec![0, LabelGrid::DEFAULT_IGNORE]).unwrap();
        assert!(g.validate(1).is_ok());
        let g = LabelGrid::new(2, 1, vec![0, 3]).unwrap();
        assert!(matches!(
            g.validate(3),
            Err(Error::InvalidLabel { label: 3, .. })
        ));
        assert!(LabelGrid::new(2, 2, vec![0; 3]).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-10.0..10.0f64, -10.0..10.0f64, 0.1..8.0f64, 0.1..8.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h, 0).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = box_iou(&a, &c);
            prop_assert_eq!(ab, box_iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(box_iou(&a, &a), 1.0);
        }
    }
}
