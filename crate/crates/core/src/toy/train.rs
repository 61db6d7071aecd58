use std::sync::Arc;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::centernet::{
    decode_detections, decode_keypoints, nms, DecodeParams, KeypointDecodeParams, DEFAULT_NMS_IOU,
};
use crate::error::{Error, Result};
use crate::metrics::{
    coco_map, depth_rmse_many, keypoint_ap50, mean_iou_many, MetricValue, DEFAULT_KEYPOINT_SIGMA,
};
use crate::types::{LabelGrid, TaskType};

use super::mix_seed;
use super::model::{Backbone, Head, HeadKind, LossConfig, ModelGrad, Prediction, ToyModel};
use super::synth::{Sample, ToyDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` every `every` steps.
    StepDecay {
        every: usize,
        factor: f64,
    },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::StepDecay { every, factor } => {
                base * factor.powi((step / every.max(1)) as i32)
            }
        }
    }
}

/// Mini-batch SGD settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// The stage keeps the candidate with the best validation metric.
    pub lr_candidates: Vec<f64>,
    pub momentum: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub losses: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 8,
            schedule: LrSchedule::StepDecay {
                every: 100,
                factor: 0.3,
            },
            lr_candidates: vec![0.03, 0.1, 0.3],
            momentum: 0.9,
            clip_norm: 5.0,
            seed: 0,
            losses: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.lr_candidates.is_empty() {
            return Err(Error::Config(
                "at least one learning-rate candidate is required".into(),
            ));
        }
        if self
            .lr_candidates
            .iter()
            .any(|&lr| !(lr >= 0.0) || !lr.is_finite())
        {
            return Err(Error::Config(
                "learning rates must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config(
                "momentum must lie in [0, 1) and clip_norm must be non-negative".into(),
            ));
        }
        if let LrSchedule::StepDecay { every, factor } = self.schedule {
            if every == 0 || !(factor > 0.0) {
                return Err(Error::Config(
                    "step decay needs every > 0 and factor > 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// A trained model and its per-step mean batch loss.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ToyModel,
    pub trace: Vec<f64>,
}

struct Momentum {
    backbone: Backbone,
    heads: Vec<Head>,
}

fn axpy<'a>(dst: impl Iterator<Item = &'a mut f64>, src: impl Iterator<Item = &'a f64>, a: f64) {
    dst.zip(src).for_each(|(d, &s)| *d += a * s);
}

fn batch_grad(
    backbone: &Backbone,
    head: &Head,
    geometry: &super::Geometry,
    samples: &[Arc<Sample>],
    idx: &[usize],
    losses: &LossConfig,
) -> Result<(f64, ModelGrad)> {
    let model = ToyModel {
        geometry: *geometry,
        backbone: backbone.clone(),
        head: head.clone(),
    };
    let mut total = ModelGrad {
        backbone: backbone.zeros_like(),
        head: head.zeros_like(),
    };
    let mut loss = 0.0;
    for &i in idx {
        let (l, g) = model.loss_and_grad(&samples[i], losses)?;
        loss += l;
        total.backbone.weights += &g.backbone.weights;
        total.backbone.bias += &g.backbone.bias;
        total.head.weights += &g.head.weights;
        total.head.bias += &g.head.bias;
    }
    let scale = 1.0 / idx.len() as f64;
    total.backbone.weights *= scale;
    total.backbone.bias *= scale;
    total.head.weights *= scale;
    total.head.bias *= scale;
    Ok((loss * scale, total))
}

/// Shared optimisation loop: one backbone, one head per sample set, and
/// round-robin steps over the sets. Each set draws its batches from its own
/// random stream, so a set's batch sequence does not depend on the others.
fn fit(
    geometry: super::Geometry,
    backbone: Backbone,
    heads: Vec<Head>,
    sets: &[&[Arc<Sample>]],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(Backbone, Vec<Head>, Vec<f64>)> {
    cfg.validate()?;
    if sets.len() != heads.len() || sets.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidInput(
            "every head needs a non-empty training set".into(),
        ));
    }
    let mut backbone = backbone;
    let mut heads = heads;
    let mut velocity = Momentum {
        backbone: backbone.zeros_like(),
        heads: heads.iter().map(Head::zeros_like).collect(),
    };
    // Every dataset draws from an identically seeded stream, so identical
    // datasets see identical batch sequences.
    let mut rngs: Vec<ChaCha8Rng> = (0..sets.len())
        .map(|_| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(1);
            r
        })
        .collect();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let d = step % sets.len();
        let set = sets[d];
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rngs[d].random_range(0..set.len()))
            .collect();
        let (loss, mut grad) = batch_grad(&backbone, &heads[d], &geometry, set, &idx, &cfg.losses)?;
        if !loss.is_finite() || grad.values().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        if cfg.clip_norm > 0.0 {
            let norm = grad.values().map(|v| v * v).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.backbone
                    .values_mut()
                    .chain(grad.head.values_mut())
                    .for_each(|v| *v *= s);
            }
        }
        let rate = cfg.schedule.rate(lr, step);
        let vb = &mut velocity.backbone;
        vb.values_mut().for_each(|v| *v *= cfg.momentum);
        axpy(vb.values_mut(), grad.backbone.values(), 1.0);
        let vh = &mut velocity.heads[d];
        vh.values_mut().for_each(|v| *v *= cfg.momentum);
        axpy(vh.values_mut(), grad.head.values(), 1.0);
        axpy(backbone.values_mut(), velocity.backbone.values(), -rate);
        axpy(heads[d].values_mut(), velocity.heads[d].values(), -rate);
        if backbone
            .values()
            .chain(heads[d].values())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Diverged { step, loss });
        }
        trace.push(loss);
    }
    Ok((backbone, heads, trace))
}

/// Trains every parameter of `model` on `samples` at a fixed base rate.
pub fn train(
    model: &ToyModel,
    samples: &[Arc<Sample>],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<Trained> {
    let (backbone, mut heads, trace) = fit(
        model.geometry,
        model.backbone.clone(),
        vec![model.head.clone()],
        &[samples],
        cfg,
        lr,
    )?;
    Ok(Trained {
        model: ToyModel {
            geometry: model.geometry,
            backbone,
            head: heads.remove(0),
        },
        trace,
    })
}

/// Seed of the head initialisation for a training stage.
pub fn head_seed(cfg: &TrainConfig) -> u64 {
    mix_seed(cfg.seed, 0x4845_4144)
}

/// Fresh head of the given kind on top of `backbone`.
pub fn fresh_model(
    backbone: &Backbone,
    kind: HeadKind,
    data: &ToyDataset,
    cfg: &TrainConfig,
) -> Result<ToyModel> {
    let head = Head::init(kind, &data.geometry, backbone.hidden_dim(), head_seed(cfg));
    ToyModel::new(data.geometry, backbone.clone(), head)
}

/// Validation score of a model: the task metric for task heads, top-1
/// accuracy for the classification head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Task(MetricValue),
    Accuracy(f64),
}

impl Score {
    /// Larger is better for every kind of score.
    fn key(&self) -> f64 {
        match self {
            Score::Task(m) if m.direction == crate::types::Direction::LowerBetter => -m.value,
            Score::Task(m) => m.value,
            Score::Accuracy(a) => *a,
        }
    }

    pub fn metric(&self) -> Option<MetricValue> {
        match self {
            Score::Task(m) => Some(*m),
            Score::Accuracy(_) => None,
        }
    }
}

/// Evaluates `model` on `samples` with the metric of its head.
pub fn evaluate(model: &ToyModel, samples: &[Arc<Sample>], use_nms: bool) -> Result<Score> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no evaluation samples".into()));
    }
    let g = &model.geometry;
    let preds = samples
        .iter()
        .map(|s| model.forward_patches(&s.patches))
        .collect::<Result<Vec<_>>>()?;
    let decode = DecodeParams {
        top_t: 100,
        stride: 1,
        score_threshold: 0.01,
    };
    let score = match model.head.kind {
        HeadKind::Classification => {
            let hits = preds
                .iter()
                .zip(samples)
                .filter(|(p, s)| match p {
                    Prediction::Classification(l) => argmax(l) == s.image_class as usize,
                    _ => false,
                })
                .count();
            Score::Accuracy(hits as f64 / samples.len() as f64)
        }
        HeadKind::Segmentation => {
            let labels: Vec<LabelGrid> = preds
                .iter()
                .map(|p| match p {
                    Prediction::Segmentation(l) => {
                        let (h, w, _) = l.dim();
                        let labels = l
                            .lanes(Axis(2))
                            .into_iter()
                            .map(|v| argmax(v.as_slice().expect("contiguous logits")) as u16)
                            .collect();
                        LabelGrid::new(w, h, labels)
                    }
                    _ => unreachable!(),
                })
                .collect::<Result<_>>()?;
            let pairs = labels.iter().zip(samples.iter().map(|s| &s.labels));
            Score::Task(mean_iou_many(pairs, g.num_classes + 1)?.metric)
        }
        HeadKind::Depth => {
            let depths: Vec<_> = preds
                .into_iter()
                .map(|p| match p {
                    Prediction::Depth(d) => d,
                    _ => unreachable!(),
                })
                .collect();
            Score::Task(depth_rmse_many(
                depths.iter().zip(samples.iter().map(|s| &s.depth)),
            )?)
        }
        HeadKind::Detection => {
            let dets: Vec<_> = preds
                .iter()
                .map(|p| match p {
                    Prediction::Detection(maps) => {
                        let d = decode_detections(maps, decode);
                        if use_nms {
                            nms(&d, DEFAULT_NMS_IOU)
                        } else {
                            d
                        }
                    }
                    _ => unreachable!(),
                })
                .collect();
            let gts: Vec<_> = samples.iter().map(|s| s.boxes.clone()).collect();
            Score::Task(coco_map(&dets, &gts)?)
        }
        HeadKind::Keypoints => {
            let params = KeypointDecodeParams {
                detection: decode,
                keypoint_threshold: 0.1,
            };
            let found: Vec<_> = preds
                .iter()
                .map(|p| match p {
                    Prediction::Keypoints(maps) => decode_keypoints(maps, params),
                    _ => unreachable!(),
                })
                .collect();
            let gts: Vec<_> = samples.iter().map(|s| s.keypoints.clone()).collect();
            let sigmas = vec![DEFAULT_KEYPOINT_SIGMA; g.num_keypoints];
            Score::Task(keypoint_ap50(&found, &gts, &sigmas)?)
        }
    };
    Ok(score)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Outcome of learning-rate selection.
#[derive(Debug, Clone)]
pub struct Selected {
    pub model: ToyModel,
    pub lr: f64,
    pub score: Score,
    pub trace: Vec<f64>,
}

/// Trains one fresh head of `kind` on top of a copy of `backbone` per
/// learning-rate candidate and keeps the best validation score; ties go to
/// the lowest rate.
pub fn train_select(
    backbone: &Backbone,
    data: &ToyDataset,
    kind: HeadKind,
    cfg: &TrainConfig,
) -> Result<Selected> {
    cfg.validate()?;
    let start = fresh_model(backbone, kind, data, cfg)?;
    let mut lrs = cfg.lr_candidates.clone();
    lrs.sort_by(f64::total_cmp);
    let mut best: Option<Selected> = None;
    for lr in lrs {
        let trained = train(&start, &data.train, cfg, lr)?;
        let score = evaluate(&trained.model, &data.val, data.nms)?;
        if best.as_ref().is_none_or(|b| score.key() > b.score.key()) {
            best = Some(Selected {
                model: trained.model,
                lr,
                score,
                trace: trained.trace,
            });
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Backbone shared by several datasets, with one head per dataset.
#[derive(Debug, Clone)]
pub struct MultiSource {
    pub backbone: Backbone,
    pub heads: Vec<Head>,
    pub trace: Vec<f64>,
}

/// Trains one backbone on several datasets of one task type with batch
/// interleaving: step `t` uses dataset `t mod n` and its own head. Every
/// head starts from the same initialisation.
pub fn train_multisource(
    backbone: &Backbone,
    datasets: &[(&ToyDataset, TaskType)],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<MultiSource> {
    let (first, task) = datasets.first().ok_or_else(|| {
        Error::InvalidInput("multi-source training needs at least one dataset".into())
    })?;
    if let Some((d, t)) = datasets.iter().find(|(_, t)| t != task) {
        return Err(Error::InvalidInput(format!(
            "mixed task types: {task} and {t} ({})",
            d.id
        )));
    }
    if let Some((d, _)) = datasets.iter().find(|(d, _)| d.geometry != first.geometry) {
        return Err(Error::ShapeMismatch(format!(
            "dataset {} has a different geometry",
            d.id
        )));
    }
    let kind = HeadKind::for_task(*task);
    let head = Head::init(kind, &first.geometry, backbone.hidden_dim(), head_seed(cfg));
    let sets: Vec<&[Arc<Sample>]> = datasets.iter().map(|(d, _)| d.train.as_slice()).collect();
    let (backbone, heads, trace) = fit(
        first.geometry,
        backbone.clone(),
        vec![head; sets.len()],
        &sets,
        cfg,
        lr,
    )?;
    Ok(MultiSource {
        backbone,
        heads,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::synth::{generate_dataset, Appearance, Geometry, SynthDomainSpec};

    fn dataset(seed: u64, n: usize) -> ToyDataset {
        let g = Geometry::default();
        let spec = SynthDomainSpec {
            domain_id: "d".into(),
            components: vec![Appearance::from_seed(11, &g, 0.2, 0.3)],
            geometry: g,
            seed,
        };
        generate_dataset("ds", &spec, n, 4).unwrap()
    }

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            schedule: LrSchedule::Constant,
            lr_candidates: vec![0.1],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let ds = dataset(1, 4);
        let m = fresh_model(
            &Backbone::init(72, 6, 0),
            HeadKind::Segmentation,
            &ds,
            &cfg(5),
        )
        .unwrap();
        let t = train(&m, &ds.train, &cfg(5), 0.0).unwrap();
        assert_eq!(t.model, m);
        assert_eq!(t.trace.len(), 5);
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = dataset(2, 6);
        let m = fresh_model(&Backbone::init(72, 6, 0), HeadKind::Detection, &ds, &cfg(8)).unwrap();
        let a = train(&m, &ds.train, &cfg(8), 0.05).unwrap();
        let b = train(&m, &ds.train, &cfg(8), 0.05).unwrap();
        assert_eq!(a.model, b.model);
        let c = train(&m, &ds.train, &cfg(8).with_seed(9), 0.05).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn single_sample_segmentation_converges() {
        let ds = dataset(3, 1);
        let c = TrainConfig {
            steps: 1500,
            batch_size: 1,
            clip_norm: 0.0,
            ..cfg(0)
        };
        let m = fresh_model(&Backbone::init(72, 8, 0), HeadKind::Segmentation, &ds, &c).unwrap();
        let t = train(&m, &ds.train, &c, 0.3).unwrap();
        let last = *t.trace.last().unwrap();
        assert!(last < 0.01, "final loss {last}");
    }

    #[test]
    fn divergence_reports_step() {
        let ds = dataset(4, 2);
        let mut bad = (*ds.train[1]).clone();
        bad.patches[[3, 5]] = f64::NAN;
        let samples = vec![ds.train[0].clone(), Arc::new(bad)];
        let c = TrainConfig {
            batch_size: 1,
            ..cfg(50)
        };
        let m = fresh_model(&Backbone::init(72, 6, 0), HeadKind::Segmentation, &ds, &c).unwrap();
        let expected = {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            rng.set_stream(1);
            (0..50)
                .position(|_| rng.random_range(0..2usize) == 1)
                .unwrap()
        };
        match train(&m, &samples, &c, 0.01) {
            Err(Error::Diverged { step, loss }) => {
                assert_eq!(step, expected);
                assert!(loss.is_nan());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn select_prefers_lowest_rate_on_ties() {
        let ds = dataset(5, 3);
        let c = TrainConfig {
            steps: 0,
            lr_candidates: vec![0.3, 0.1, 0.2],
            ..cfg(0)
        };
        let s = train_select(&Backbone::init(72, 6, 0), &ds, HeadKind::Segmentation, &c).unwrap();
        assert_eq!(s.lr, 0.1);
    }

    #[test]
    fn multisource_single_matches_plain_training() {
        let ds = dataset(6, 5);
        let c = cfg(12);
        let b = Backbone::init(72, 6, 1);
        let ms = train_multisource(&b, &[(&ds, TaskType::DepthEstimation)], &c, 0.05).unwrap();
        let plain = train(
            &fresh_model(&b, HeadKind::Depth, &ds, &c).unwrap(),
            &ds.train,
            &c,
            0.05,
        )
        .unwrap();
        assert_eq!(ms.backbone, plain.model.backbone);
        assert_eq!(ms.heads[0], plain.model.head);
    }

    #[test]
    fn multisource_rejects_mixed_tasks() {
        let ds = dataset(7, 2);
        let r = train_multisource(
            &Backbone::init(72, 6, 1),
            &[
                (&ds, TaskType::DepthEstimation),
                (&ds, TaskType::ObjectDetection),
            ],
            &cfg(2),
            0.1,
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}
