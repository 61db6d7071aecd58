use std::ops::Range;

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::centernet::{
    detection_loss_grad, keypoint_loss_grad, sigmoid, DetectionLossWeights, DetectionMaps,
    FocalParams, KeypointLossWeights, KeypointMaps,
};
use crate::dense::{depth_from_logits, depth_total_logits_grad, segmentation_nll_grad, LogitGrid};
use crate::error::{Error, Result};
use crate::types::{DepthGrid, TaskType};

use super::synth::{im2col, Geometry, Sample};

/// Heatmap logit bias giving an initial probability of about 0.1.
pub const HEAT_PRIOR_BIAS: f64 = -2.19;

/// Shared feature extractor: `tanh(W x + b)` applied to every pixel's
/// neighbourhood vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    /// `hidden × input`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Backbone {
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (input_dim as f64).sqrt();
        Backbone {
            weights: Array2::from_shape_simple_fn((hidden, input_dim), || {
                std * rng.sample::<f64, _>(StandardNormal)
            }),
            bias: Array1::zeros(hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Backbone {
            weights: Array2::zeros(self.weights.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// `X Wᵀ + b`, one row per pixel.
    pub fn pre_activation(&self, patches: &Array2<f64>) -> Result<Array2<f64>> {
        if patches.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "patch width {} vs backbone input {}",
                patches.ncols(),
                self.input_dim()
            )));
        }
        Ok(patches.dot(&self.weights.t()) + &self.bias)
    }

    pub fn activations(&self, patches: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.pre_activation(patches)?.mapv(f64::tanh))
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Segmentation,
    Detection,
    Keypoints,
    Depth,
    /// Image-level classification on pooled features (pre-training only).
    Classification,
}

impl HeadKind {
    pub fn for_task(task: TaskType) -> Self {
        match task {
            TaskType::SemanticSegmentation => HeadKind::Segmentation,
            TaskType::ObjectDetection => HeadKind::Detection,
            TaskType::KeypointDetection => HeadKind::Keypoints,
            TaskType::DepthEstimation => HeadKind::Depth,
        }
    }

    pub fn task(self) -> Option<TaskType> {
        match self {
            HeadKind::Segmentation => Some(TaskType::SemanticSegmentation),
            HeadKind::Detection => Some(TaskType::ObjectDetection),
            HeadKind::Keypoints => Some(TaskType::KeypointDetection),
            HeadKind::Depth => Some(TaskType::DepthEstimation),
            HeadKind::Classification => None,
        }
    }

    pub fn outputs(self, g: &Geometry) -> usize {
        let j = g.num_keypoints;
        match self {
            HeadKind::Segmentation => g.num_classes + 1,
            HeadKind::Detection => g.num_classes + 4,
            HeadKind::Keypoints => 7 + 3 * j,
            HeadKind::Depth => 1,
            HeadKind::Classification => g.num_classes,
        }
    }

    fn tag(self) -> u64 {
        match self {
            HeadKind::Segmentation => 1,
            HeadKind::Detection => 2,
            HeadKind::Keypoints => 3,
            HeadKind::Depth => 4,
            HeadKind::Classification => 5,
        }
    }
}

/// Channel ranges of the keypoint head output.
struct KeypointLayout {
    object_heat: Range<usize>,
    heat: Range<usize>,
    object_offset: Range<usize>,
    size: Range<usize>,
    offset: Range<usize>,
    allocation: Range<usize>,
}

impl KeypointLayout {
    fn new(j: usize) -> Self {
        KeypointLayout {
            object_heat: 0..1,
            heat: 1..1 + j,
            object_offset: 1 + j..3 + j,
            size: 3 + j..5 + j,
            offset: 5 + j..7 + j,
            allocation: 7 + j..7 + 3 * j,
        }
    }
}

/// Task-specific linear map on top of the backbone features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub kind: HeadKind,
    /// `outputs × hidden`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

const SIZE_PRIOR: f64 = 4.0;
const DEPTH_PRIOR_LOGIT: f64 = 4.993;

impl Head {
    pub fn init(kind: HeadKind, geometry: &Geometry, hidden: usize, seed: u64) -> Self {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ kind.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let out = kind.outputs(geometry);
        let std = 0.5 / (hidden as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((out, hidden), || {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        let mut bias = Array1::zeros(out);
        let k = geometry.num_classes;
        match kind {
            HeadKind::Detection => {
                bias.slice_mut(s![..k]).fill(HEAT_PRIOR_BIAS);
                bias.slice_mut(s![k + 2..k + 4]).fill(SIZE_PRIOR);
            }
            HeadKind::Keypoints => {
                let l = KeypointLayout::new(geometry.num_keypoints);
                bias.slice_mut(s![l.object_heat.start..l.heat.end])
                    .fill(HEAT_PRIOR_BIAS);
                bias.slice_mut(s![l.size]).fill(SIZE_PRIOR);
            }
            HeadKind::Depth => bias[0] = DEPTH_PRIOR_LOGIT,
            HeadKind::Segmentation | HeadKind::Classification => {}
        }
        Head {
            kind,
            weights,
            bias,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Head {
            kind: self.kind,
            weights: Array2::zeros(self.weights.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Loss weights used when training toy heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub depth_smoothness: f64,
    pub detection: DetectionLossWeights,
    pub keypoint: KeypointLossWeights,
    pub focal: FocalParams,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            depth_smoothness: 0.1,
            detection: DetectionLossWeights::default(),
            keypoint: KeypointLossWeights::default(),
            focal: FocalParams::default(),
        }
    }
}

/// Decoded model output for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Segmentation(LogitGrid),
    /// Heatmaps hold probabilities.
    Detection(DetectionMaps),
    Keypoints(KeypointMaps),
    Depth(DepthGrid),
    Classification(Vec<f64>),
}

/// Gradient of a loss with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub backbone: Backbone,
    pub head: Head,
}

impl ModelGrad {
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.backbone.values().chain(self.head.values())
    }
}

/// Backbone plus one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub geometry: Geometry,
    pub backbone: Backbone,
    pub head: Head,
}

fn channel_maps(out: &Array2<f64>, range: Range<usize>, h: usize, w: usize) -> Array3<f64> {
    let view = out.slice(s![.., range]);
    Array3::from_shape_fn((view.ncols(), h, w), |(c, r, col)| view[[r * w + col, c]])
}

fn write_maps(grad: &mut Array2<f64>, start: usize, maps: &Array3<f64>) {
    let (ch, h, w) = maps.dim();
    for c in 0..ch {
        for r in 0..h {
            for col in 0..w {
                grad[[r * w + col, start + c]] += maps[[c, r, col]];
            }
        }
    }
}

/// Chains a probability gradient through the sigmoid.
fn through_sigmoid(g: Array3<f64>, p: &Array3<f64>) -> Array3<f64> {
    g * &p.mapv(|v| v * (1.0 - v))
}

impl ToyModel {
    pub fn new(geometry: Geometry, backbone: Backbone, head: Head) -> Result<Self> {
        if backbone.input_dim() != geometry.patch_dim() {
            return Err(Error::ShapeMismatch(format!(
                "backbone input {} vs patch size {}",
                backbone.input_dim(),
                geometry.patch_dim()
            )));
        }
        if head.weights.ncols() != backbone.hidden_dim()
            || head.weights.nrows() != head.kind.outputs(&geometry)
        {
            return Err(Error::ShapeMismatch(format!(
                "{:?} head {:?} does not fit backbone width {}",
                head.kind,
                head.weights.dim(),
                backbone.hidden_dim()
            )));
        }
        Ok(ToyModel {
            geometry,
            backbone,
            head,
        })
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.backbone.values().chain(self.head.values())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.backbone.values_mut().chain(self.head.values_mut())
    }

    /// Forward pass on a `(rows, cols, channels)` image.
    pub fn forward(&self, image: &Array3<f64>) -> Result<Prediction> {
        let g = &self.geometry;
        if image.dim() != (g.height, g.width, g.channels) {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} vs geometry {}x{}x{}",
                image.dim(),
                g.height,
                g.width,
                g.channels
            )));
        }
        self.forward_patches(&im2col(image))
    }

    /// Forward pass on precomputed neighbourhood rows.
    pub fn forward_patches(&self, patches: &Array2<f64>) -> Result<Prediction> {
        let g = &self.geometry;
        let (h, w) = (g.height, g.width);
        let hidden = self.backbone.activations(patches)?;
        if hidden.nrows() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} patch rows for {h}x{w} pixels",
                hidden.nrows()
            )));
        }
        if self.head.kind == HeadKind::Classification {
            let pooled = hidden.mean_axis(Axis(0)).expect("non-empty image");
            return Ok(Prediction::Classification(
                (self.head.weights.dot(&pooled) + &self.head.bias).to_vec(),
            ));
        }
        let out = self.pixel_outputs(&hidden);
        Ok(match self.head.kind {
            HeadKind::Segmentation => Prediction::Segmentation(
                out.into_shape_with_order((h, w, g.num_classes + 1))
                    .expect("row-major pixel outputs"),
            ),
            HeadKind::Depth => Prediction::Depth(depth_from_logits(w, h, &out.column(0).to_vec())?),
            HeadKind::Detection => Prediction::Detection(self.detection_maps(&out)),
            HeadKind::Keypoints => Prediction::Keypoints(self.keypoint_maps(&out)),
            HeadKind::Classification => unreachable!(),
        })
    }

    fn pixel_outputs(&self, hidden: &Array2<f64>) -> Array2<f64> {
        let out = hidden.dot(&self.head.weights.t()) + &self.head.bias;
        out.as_standard_layout().into_owned()
    }

    fn detection_maps(&self, out: &Array2<f64>) -> DetectionMaps {
        let (h, w, k) = (
            self.geometry.height,
            self.geometry.width,
            self.geometry.num_classes,
        );
        DetectionMaps {
            heatmap: channel_maps(out, 0..k, h, w).mapv(sigmoid),
            offset: channel_maps(out, k..k + 2, h, w),
            size: channel_maps(out, k + 2..k + 4, h, w),
        }
    }

    fn keypoint_maps(&self, out: &Array2<f64>) -> KeypointMaps {
        let (h, w) = (self.geometry.height, self.geometry.width);
        let l = KeypointLayout::new(self.geometry.num_keypoints);
        KeypointMaps {
            detection: DetectionMaps {
                heatmap: channel_maps(out, l.object_heat, h, w).mapv(sigmoid),
                offset: channel_maps(out, l.object_offset, h, w),
                size: channel_maps(out, l.size, h, w),
            },
            heatmap: channel_maps(out, l.heat, h, w).mapv(sigmoid),
            offset: channel_maps(out, l.offset, h, w),
            allocation: channel_maps(out, l.allocation, h, w),
        }
    }

    /// Loss on one labelled sample.
    pub fn loss(&self, sample: &Sample, losses: &LossConfig) -> Result<f64> {
        self.loss_and_grad(sample, losses).map(|(l, _)| l)
    }

    /// Loss on one labelled sample and its analytic gradient.
    pub fn loss_and_grad(&self, sample: &Sample, losses: &LossConfig) -> Result<(f64, ModelGrad)> {
        let x = &sample.patches;
        let hidden = self.backbone.activations(x)?;
        let p = hidden.nrows();
        let mut head_grad = self.head.zeros_like();
        let (loss, d_hidden) = if self.head.kind == HeadKind::Classification {
            let pooled = hidden.mean_axis(Axis(0)).expect("non-empty image");
            let logits = self.head.weights.dot(&pooled) + &self.head.bias;
            let (loss, d_logits) = softmax_cross_entropy(&logits, sample.image_class as usize)?;
            head_grad.weights = outer(&d_logits, &pooled);
            head_grad.bias = d_logits.clone();
            let d_pooled = self.head.weights.t().dot(&d_logits) / p as f64;
            let d_hidden = Array2::from_shape_fn((p, d_pooled.len()), |(_, j)| d_pooled[j]);
            (loss, d_hidden)
        } else {
            let out = self.pixel_outputs(&hidden);
            let (loss, d_out) = self.output_grad(&out, sample, losses)?;
            head_grad.weights = d_out.t().dot(&hidden);
            head_grad.bias = d_out.sum_axis(Axis(0));
            (loss, d_out.dot(&self.head.weights))
        };
        let d_pre = d_hidden * &hidden.mapv(|a| 1.0 - a * a);
        let backbone_grad = Backbone {
            weights: d_pre.t().dot(x),
            bias: d_pre.sum_axis(Axis(0)),
        };
        Ok((
            loss,
            ModelGrad {
                backbone: backbone_grad,
                head: head_grad,
            },
        ))
    }

    fn output_grad(
        &self,
        out: &Array2<f64>,
        sample: &Sample,
        losses: &LossConfig,
    ) -> Result<(f64, Array2<f64>)> {
        let g = &self.geometry;
        let (h, w) = (g.height, g.width);
        let mut d_out = Array2::zeros(out.dim());
        let loss = match self.head.kind {
            HeadKind::Segmentation => {
                let logits = out
                    .clone()
                    .into_shape_with_order((h, w, g.num_classes + 1))
                    .expect("row-major pixel outputs");
                let (loss, grad) = segmentation_nll_grad(&logits, &sample.labels)?;
                d_out = grad
                    .into_shape_with_order((h * w, g.num_classes + 1))
                    .expect("row-major logits");
                loss
            }
            HeadKind::Depth => {
                let logits = out.column(0).to_vec();
                let (loss, grad) =
                    depth_total_logits_grad(&logits, &sample.depth, losses.depth_smoothness)?;
                d_out.column_mut(0).assign(&Array1::from(grad));
                loss
            }
            HeadKind::Detection => {
                let k = g.num_classes;
                let maps = self.detection_maps(out);
                let (loss, grad) = detection_loss_grad(
                    &maps,
                    &sample.det_targets,
                    losses.detection,
                    losses.focal,
                )?;
                write_maps(&mut d_out, 0, &through_sigmoid(grad.heatmap, &maps.heatmap));
                write_maps(&mut d_out, k, &grad.offset);
                write_maps(&mut d_out, k + 2, &grad.size);
                loss.total
            }
            HeadKind::Keypoints => {
                let l = KeypointLayout::new(g.num_keypoints);
                let maps = self.keypoint_maps(out);
                let (loss, grad) = keypoint_loss_grad(
                    &maps,
                    &sample.kp_det_targets,
                    &sample.kp_targets,
                    losses.keypoint,
                    losses.focal,
                )?;
                write_maps(
                    &mut d_out,
                    l.object_heat.start,
                    &through_sigmoid(grad.detection.heatmap, &maps.detection.heatmap),
                );
                write_maps(
                    &mut d_out,
                    l.heat.start,
                    &through_sigmoid(grad.heatmap, &maps.heatmap),
                );
                write_maps(&mut d_out, l.object_offset.start, &grad.detection.offset);
                write_maps(&mut d_out, l.size.start, &grad.detection.size);
                write_maps(&mut d_out, l.offset.start, &grad.offset);
                write_maps(&mut d_out, l.allocation.start, &grad.allocation);
                loss.total
            }
            HeadKind::Classification => unreachable!(),
        };
        Ok((loss, d_out))
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Softmax cross-entropy of one logit vector and its gradient.
pub fn softmax_cross_entropy(logits: &Array1<f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidLabel {
            label: label as u16,
            num_classes: logits.len(),
        });
    }
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let z = exp.sum();
    let loss = z.ln() + max - logits[label];
    let mut grad = exp / z;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::synth::{generate_dataset, Appearance, SynthDomainSpec};
    use ndarray::array;

    #[test]
    fn zero_weights_give_uniform_segmentation() {
        let g = Geometry::default();
        let m = ToyModel::new(
            g,
            Backbone::init(g.patch_dim(), 4, 0).zeros_like(),
            Head::init(HeadKind::Segmentation, &g, 4, 0).zeros_like(),
        )
        .unwrap();
        let Prediction::Segmentation(logits) = m.forward(&Array3::ones((10, 10, 8))).unwrap()
        else {
            panic!("wrong head");
        };
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_logits_on_two_by_two() {
        // One channel, 2x2 image; the backbone reads only the centre tap.
        let g = Geometry {
            height: 2,
            width: 2,
            channels: 1,
            num_classes: 1,
            num_keypoints: 1,
            max_objects: 1,
        };
        let mut weights = Array2::zeros((1, 9));
        weights[[0, 4]] = 0.5;
        let backbone = Backbone {
            weights,
            bias: array![0.0],
        };
        let head = Head {
            kind: HeadKind::Segmentation,
            weights: array![[2.0], [-1.0]],
            bias: array![0.0, 1.0],
        };
        let m = ToyModel::new(g, backbone, head).unwrap();
        let img = Array3::from_shape_vec((2, 2, 1), vec![0.0, 1.0, 2.0, -2.0]).unwrap();
        let Prediction::Segmentation(l) = m.forward(&img).unwrap() else {
            panic!("wrong head");
        };
        for (i, &x) in [0.0f64, 1.0, 2.0, -2.0].iter().enumerate() {
            let t = (0.5 * x).tanh();
            assert_eq!(l[[i / 2, i % 2, 0]], 2.0 * t);
            assert_eq!(l[[i / 2, i % 2, 1]], 1.0 - t);
        }
    }

    #[test]
    fn doubling_weights_doubles_pre_activation() {
        let g = Geometry::default();
        let b = Backbone::init(g.patch_dim(), 6, 3);
        let x = Array2::from_shape_fn((5, g.patch_dim()), |(i, j)| ((i * 7 + j) % 5) as f64 - 2.0);
        let mut b2 = b.clone();
        b2.weights *= 2.0;
        let a = b.pre_activation(&x).unwrap();
        let a2 = b2.pre_activation(&x).unwrap();
        assert!(a.iter().zip(&a2).all(|(u, v)| (2.0 * u - v).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = Geometry::default();
        let m = ToyModel::new(
            g,
            Backbone::init(g.patch_dim(), 4, 0),
            Head::init(HeadKind::Depth, &g, 4, 0),
        )
        .unwrap();
        assert!(m.forward(&Array3::zeros((9, 10, 8))).is_err());
        assert!(ToyModel::new(
            g,
            Backbone::init(5, 4, 0),
            Head::init(HeadKind::Depth, &g, 4, 0)
        )
        .is_err());
    }

    #[test]
    fn constant_image_pools_to_pointwise_response() {
        let g = Geometry::default();
        let b = Backbone::init(g.patch_dim(), 5, 1);
        let img = Array3::from_elem((10, 10, 8), 0.3);
        let act = b.activations(&im2col(&img)).unwrap();
        let single = b
            .activations(&Array2::from_elem((1, g.patch_dim()), 0.3))
            .unwrap();
        for row in act.rows() {
            assert_eq!(row, single.row(0));
        }
    }

    #[test]
    fn classification_loss_is_finite_on_generated_data() {
        let g = Geometry::default();
        let spec = SynthDomainSpec {
            domain_id: "d".into(),
            components: vec![Appearance::from_seed(1, &g, 0.1, 0.2)],
            geometry: g,
            seed: 3,
        };
        let ds = generate_dataset("x", &spec, 2, 1).unwrap();
        for kind in [
            HeadKind::Segmentation,
            HeadKind::Detection,
            HeadKind::Keypoints,
            HeadKind::Depth,
            HeadKind::Classification,
        ] {
            let m = ToyModel::new(
                g,
                Backbone::init(g.patch_dim(), 6, 0),
                Head::init(kind, &g, 6, 0),
            )
            .unwrap();
            let (l, grad) = m
                .loss_and_grad(&ds.train[0], &LossConfig::default())
                .unwrap();
            assert!(l.is_finite(), "{kind:?}");
            assert!(grad.values().all(|v| v.is_finite()));
        }
    }
}
