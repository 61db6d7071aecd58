use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::centernet::{
    encode_detection_targets, encode_keypoint_targets, KeypointTargetMaps, TargetMaps,
};
use crate::error::{Error, Result};
use crate::types::{BBox, DepthGrid, Keypoint, KeypointInstance, LabelGrid};

/// Side of the square neighbourhood each pixel sees.
pub const PATCH: usize = 3;

/// Image and label-space dimensions shared by every toy dataset of a suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Object classes; segmentation adds a background label in front.
    pub num_classes: usize,
    pub num_keypoints: usize,
    pub max_objects: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            height: 10,
            width: 10,
            channels: 8,
            num_classes: 3,
            num_keypoints: 2,
            max_objects: 3,
        }
    }
}

impl Geometry {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Length of one pixel's input vector (its `PATCH × PATCH` neighbourhood).
    pub fn patch_dim(&self) -> usize {
        PATCH * PATCH * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < PATCH || self.width < PATCH {
            return Err(Error::InvalidInput(format!(
                "toy images must be at least {PATCH}x{PATCH}, got {}x{}",
                self.height, self.width
            )));
        }
        if self.channels == 0
            || self.num_classes == 0
            || self.num_keypoints == 0
            || self.max_objects == 0
        {
            return Err(Error::InvalidInput(
                "toy geometry counts must be positive".into(),
            ));
        }
        let largest = 3 + self.num_classes;
        if largest > self.height.min(self.width) {
            return Err(Error::InvalidInput(format!(
                "objects up to {largest} pixels do not fit a {}x{} image",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Colour statistics of one appearance component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub background: Vec<f64>,
    pub class_colors: Vec<Vec<f64>>,
    pub keypoint_colors: Vec<Vec<f64>>,
    pub background_depth: f64,
    /// Spread of the per-image background colour.
    pub breadth: f64,
    /// Per-pixel noise standard deviation.
    pub noise: f64,
}

/// Amplitude of class and keypoint colours.
const SIGNAL: f64 = 1.5;
/// Norm of the mean background colour.
const BACKGROUND: f64 = 1.0;

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Gram-Schmidt on Gaussian draws. Past `dim` vectors the remainder cannot
/// be orthogonal and is only normalised.
fn random_frame(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v = gaussian_vec(rng, dim);
        if frame.len() < dim {
            for u in &frame {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            frame.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    frame
}

impl Appearance {
    /// Draws a random appearance. Class and keypoint colours are orthogonal
    /// directions of a seed-specific subspace of the channel space.
    pub fn from_seed(seed: u64, geometry: &Geometry, breadth: f64, noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = geometry.num_classes;
        let frame = random_frame(&mut rng, k + geometry.num_keypoints, geometry.channels);
        let scale = |v: &Vec<f64>| v.iter().map(|a| a * SIGNAL).collect::<Vec<f64>>();
        let background = gaussian_vec(&mut rng, geometry.channels);
        let norm = background
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        let background = background
            .into_iter()
            .map(|a| BACKGROUND * a / norm)
            .collect();
        let background_depth = 6.0 + 3.0 * rng.random::<f64>();
        Appearance {
            background,
            class_colors: frame[..k].iter().map(scale).collect(),
            keypoint_colors: frame[k..].iter().map(scale).collect(),
            background_depth,
            breadth,
            noise,
        }
    }

    fn check(&self, geometry: &Geometry) -> Result<()> {
        let c = geometry.channels;
        let ok = self.background.len() == c
            && self.class_colors.len() == geometry.num_classes
            && self.keypoint_colors.len() == geometry.num_keypoints
            && self
                .class_colors
                .iter()
                .chain(&self.keypoint_colors)
                .all(|v| v.len() == c);
        if !ok {
            return Err(Error::ShapeMismatch(
                "appearance does not match geometry".into(),
            ));
        }
        if !(self.background_depth > 0.0) || !(self.breadth >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::InvalidInput(
                "appearance depth, breadth and noise must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Generator for one dataset: an appearance mixture plus the sample seed.
/// A mixture containing another spec's component covers that spec's
/// distribution exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDomainSpec {
    pub domain_id: String,
    pub components: Vec<Appearance>,
    pub geometry: Geometry,
    pub seed: u64,
}

/// One generated image with labels for every task type.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(rows, cols, channels)`.
    pub image: Array3<f64>,
    pub labels: LabelGrid,
    pub depth: DepthGrid,
    pub boxes: Vec<BBox>,
    /// Keypoint instances; every owning box has class 0.
    pub keypoints: Vec<KeypointInstance>,
    /// Class of the largest object.
    pub image_class: u16,
    pub component: usize,
    /// One row per pixel: the flattened neighbourhood.
    pub patches: Array2<f64>,
    pub det_targets: TargetMaps,
    pub kp_targets: KeypointTargetMaps,
    pub kp_det_targets: TargetMaps,
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub id: String,
    pub domain: String,
    pub geometry: Geometry,
    pub train: Vec<Arc<Sample>>,
    pub val: Vec<Arc<Sample>>,
    /// Whether detections are filtered by non-maximum suppression.
    pub nms: bool,
}

impl ToyDataset {
    /// The same dataset with at most `n` training samples.
    pub fn capped(&self, n: usize) -> ToyDataset {
        ToyDataset {
            train: self.train.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Flattens the `PATCH × PATCH` neighbourhood of every pixel, replicating
/// edge pixels beyond the border.
pub fn im2col(image: &Array3<f64>) -> Array2<f64> {
    let (h, w, c) = image.dim();
    let half = (PATCH / 2) as isize;
    let mut out = Array2::zeros((h * w, PATCH * PATCH * c));
    for r in 0..h {
        for col in 0..w {
            let mut row = out.row_mut(r * w + col);
            let mut k = 0;
            for dr in -half..=half {
                let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                for dc in -half..=half {
                    let cc = (col as isize + dc).clamp(0, w as isize - 1) as usize;
                    for ch in 0..c {
                        row[k] = image[[rr, cc, ch]];
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

/// Geometry of one placed object before rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub class_id: u16,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Placement {
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    fn center_pixel(&self) -> (usize, usize) {
        let (cx, cy) = self.center();
        (cy.floor() as usize, cx.floor() as usize)
    }

    fn covers(&self, row: usize, col: usize) -> bool {
        row >= self.y && row < self.y + self.h && col >= self.x && col < self.x + self.w
    }

    /// Normalised squared elliptical radius of a pixel centre; the blob is
    /// where this is at most 1.
    pub fn rho2(&self, row: usize, col: usize) -> f64 {
        let (cx, cy) = self.center();
        let dx = (col as f64 + 0.5 - cx) / (self.w as f64 / 2.0);
        let dy = (row as f64 + 0.5 - cy) / (self.h as f64 / 2.0);
        dx * dx + dy * dy
    }

    /// Keypoints spread along the box diagonal between `±(w/4, h/4)`.
    pub fn keypoints(&self, count: usize) -> Vec<(f64, f64)> {
        let (cx, cy) = self.center();
        (0..count)
            .map(|j| {
                let t = if count > 1 {
                    -0.25 + 0.5 * j as f64 / (count - 1) as f64
                } else {
                    0.0
                };
                (cx + t * self.w as f64, cy + t * self.h as f64)
            })
            .collect()
    }
}

fn place_objects(rng: &mut ChaCha8Rng, g: &Geometry) -> Vec<Placement> {
    let wanted = rng.random_range(1..=g.max_objects);
    let mut placed: Vec<Placement> = Vec::with_capacity(wanted);
    for _ in 0..wanted {
        for _attempt in 0..50 {
            let class_id = rng.random_range(0..g.num_classes);
            let w = (3 + class_id + rng.random_range(0..=1)).min(g.width);
            let h = (3 + class_id + rng.random_range(0..=1)).min(g.height);
            let x = rng.random_range(0..=g.width - w);
            let y = rng.random_range(0..=g.height - h);
            let p = Placement {
                class_id: class_id as u16,
                x,
                y,
                w,
                h,
            };
            let (pr, pc) = p.center_pixel();
            let clash = placed.iter().any(|q| {
                let (qr, qc) = q.center_pixel();
                pr.abs_diff(qr).max(pc.abs_diff(qc)) < 2 || q.covers(pr, pc) || p.covers(qr, qc)
            });
            if !clash {
                placed.push(p);
                break;
            }
        }
    }
    placed
}

fn sample_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 40) | index as u64);
    rng
}

fn render(spec: &SynthDomainSpec, split: u64, index: usize) -> Result<Sample> {
    let g = &spec.geometry;
    let mut rng = sample_rng(spec.seed, split, index);
    let component = rng.random_range(0..spec.components.len());
    let look = &spec.components[component];
    let objects = place_objects(&mut rng, g);

    let background: Vec<f64> = look
        .background
        .iter()
        .map(|&b| b + look.breadth * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let (h, w, c) = (g.height, g.width, g.channels);
    let mut clean = Array3::from_shape_fn((h, w, c), |(_, _, ch)| background[ch]);
    let mut labels = vec![0u16; h * w];
    let mut depth = vec![look.background_depth; h * w];
    for p in &objects {
        let color = &look.class_colors[p.class_id as usize];
        for r in p.y..p.y + p.h {
            for col in p.x..p.x + p.w {
                let rho2 = p.rho2(r, col);
                if rho2 <= 1.0 {
                    let amp = 1.0 - 0.5 * rho2;
                    for ch in 0..c {
                        clean[[r, col, ch]] = background[ch] + amp * color[ch];
                    }
                    labels[r * w + col] = p.class_id + 1;
                    depth[r * w + col] = 1.0 + f64::from(p.class_id);
                }
            }
        }
    }
    let mut keypoints = Vec::with_capacity(objects.len());
    for p in &objects {
        let pts = p.keypoints(g.num_keypoints);
        for (j, &(kx, ky)) in pts.iter().enumerate() {
            let (r, col) = (ky.floor() as usize, kx.floor() as usize);
            for ch in 0..c {
                clean[[r, col, ch]] += look.keypoint_colors[j][ch];
            }
        }
        keypoints.push(KeypointInstance {
            keypoints: pts.iter().map(|&(x, y)| Keypoint::visible(x, y)).collect(),
            bbox: BBox::new(p.x as f64, p.y as f64, p.w as f64, p.h as f64, 0)?,
            score: 1.0,
        });
    }
    let image = clean.mapv(|v| v + look.noise * rng.sample::<f64, _>(StandardNormal));

    let boxes = objects
        .iter()
        .map(|p| BBox::new(p.x as f64, p.y as f64, p.w as f64, p.h as f64, p.class_id))
        .collect::<Result<Vec<_>>>()?;
    let image_class = objects
        .iter()
        .fold(None::<&Placement>, |best, p| match best {
            Some(b) if b.w * b.h >= p.w * p.h => Some(b),
            _ => Some(p),
        })
        .map_or(0, |p| p.class_id);
    let det_targets = encode_detection_targets(&boxes, g.num_classes, h, w, 1)?;
    let (kp_targets, kp_det_targets) =
        encode_keypoint_targets(&keypoints, g.num_keypoints, 1, h, w, 1)?;
    Ok(Sample {
        patches: im2col(&image),
        image,
        labels: LabelGrid::new(w, h, labels)?,
        depth: DepthGrid::new(w, h, depth)?,
        boxes,
        keypoints,
        image_class,
        component,
        det_targets,
        kp_targets,
        kp_det_targets,
    })
}

const TRAIN_SPLIT: u64 = 1;
const VAL_SPLIT: u64 = 2;

/// Generates `n_train + n_val` labelled images. Every sample has its own
/// random stream, so a larger `n` only appends samples.
pub fn generate_dataset(
    dataset_id: &str,
    spec: &SynthDomainSpec,
    n_train: usize,
    n_val: usize,
) -> Result<ToyDataset> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::InvalidInput(
            "toy datasets need at least one train and one val sample".into(),
        ));
    }
    if spec.components.is_empty() {
        return Err(Error::InvalidInput(format!(
            "domain {} has no components",
            spec.domain_id
        )));
    }
    spec.geometry.validate()?;
    for c in &spec.components {
        c.check(&spec.geometry)?;
    }
    let split = |tag, n| {
        (0..n)
            .map(|i| render(spec, tag, i).map(Arc::new))
            .collect::<Result<Vec<_>>>()
    };
    Ok(ToyDataset {
        id: dataset_id.to_string(),
        domain: spec.domain_id.clone(),
        geometry: spec.geometry,
        train: split(TRAIN_SPLIT, n_train)?,
        val: split(VAL_SPLIT, n_val)?,
        nms: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64, comps: &[u64]) -> SynthDomainSpec {
        let g = Geometry::default();
        SynthDomainSpec {
            domain_id: "d".into(),
            components: comps
                .iter()
                .map(|&s| Appearance::from_seed(s, &g, 0.2, 0.3))
                .collect(),
            geometry: g,
            seed,
        }
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let a = generate_dataset("a", &spec(5, &[1]), 6, 2).unwrap();
        let b = generate_dataset("a", &spec(5, &[1]), 9, 2).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            let bits = |s: &Sample| s.image.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
            assert_eq!(x.labels, y.labels);
        }
        let c = generate_dataset("a", &spec(6, &[1]), 6, 2).unwrap();
        assert_ne!(a.train[0].image, c.train[0].image);
    }

    #[test]
    fn appearance_colours_are_orthogonal() {
        let g = Geometry::default();
        let a = Appearance::from_seed(3, &g, 0.1, 0.1);
        let all: Vec<&Vec<f64>> = a.class_colors.iter().chain(&a.keypoint_colors).collect();
        for i in 0..all.len() {
            for j in 0..all.len() {
                let dot: f64 = all[i].iter().zip(all[j]).map(|(x, y)| x * y).sum();
                let want = if i == j { SIGNAL * SIGNAL } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn im2col_replicates_edges() {
        let img = Array3::from_shape_fn((3, 4, 1), |(r, c, _)| (r * 4 + c) as f64);
        let p = im2col(&img);
        assert_eq!(p.dim(), (12, 9));
        assert_eq!(
            p.row(0).to_vec(),
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 4.0, 4.0, 5.0]
        );
        assert_eq!(
            p.row(5).to_vec(),
            vec![0.0, 1.0, 2.0, 4.0, 5.0, 6.0, 8.0, 9.0, 10.0]
        );
    }

    #[test]
    fn labels_consistent() {
        let ds = generate_dataset("a", &spec(9, &[2, 3]), 30, 1).unwrap();
        for s in &ds.train {
            assert!(!s.boxes.is_empty());
            for (i, &l) in s.labels.labels.iter().enumerate() {
                if l == 0 {
                    continue;
                }
                let (r, c) = (
                    (i / s.labels.width) as f64 + 0.5,
                    (i % s.labels.width) as f64 + 0.5,
                );
                assert!(s
                    .boxes
                    .iter()
                    .any(|b| b.class_id + 1 == l && b.contains(c, r)));
            }
            for inst in &s.keypoints {
                assert!(inst.keypoints.iter().all(|k| inst.bbox.contains(k.x, k.y)));
            }
            assert_eq!(s.patches.dim(), (100, 72));
        }
    }
}
