//! Pixel-wise heads: segmentation cross-entropy and the depth losses, with
//! the softplus activation used to turn depth logits into depths.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::types::{DepthGrid, LabelGrid};

/// Logits laid out as `(rows, cols, channels)`.
pub type LogitGrid = Array3<f64>;

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic sigmoid.
pub fn softplus_grad(x: f64) -> f64 {
    crate::centernet::sigmoid(x)
}

fn check_label_shape(logits: &LogitGrid, gt: &LabelGrid) -> Result<usize> {
    let (h, w, c) = logits.dim();
    if h != gt.height || w != gt.width {
        return Err(Error::ShapeMismatch(format!(
            "logits {h}x{w} vs labels {}x{}",
            gt.height, gt.width
        )));
    }
    if c < 2 {
        return Err(Error::InvalidInput(format!(
            "segmentation needs at least 2 classes, got {c}"
        )));
    }
    gt.validate(c)?;
    Ok(c)
}

/// Mean negative log-likelihood of the ground-truth class under a per-pixel
/// softmax; ignore-labelled pixels do not contribute.
pub fn segmentation_nll(logits: &LogitGrid, gt: &LabelGrid) -> Result<f64> {
    segmentation_nll_grad(logits, gt).map(|(l, _)| l)
}

/// [`segmentation_nll`] and its gradient with respect to the logits.
pub fn segmentation_nll_grad(logits: &LogitGrid, gt: &LabelGrid) -> Result<(f64, LogitGrid)> {
    let c = check_label_shape(logits, gt)?;
    let n = gt
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, _)| !gt.is_ignored(i))
        .count();
    if n == 0 {
        return Err(Error::NoEvaluablePixels);
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Array3::zeros(logits.dim());
    let mut sum = 0.0;
    for r in 0..gt.height {
        for col in 0..gt.width {
            let idx = r * gt.width + col;
            if gt.is_ignored(idx) {
                continue;
            }
            let label = gt.labels[idx] as usize;
            let z = logits.slice(ndarray::s![r, col, ..]);
            let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let denom: f64 = z.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + denom.ln();
            sum += lse - z[label];
            for k in 0..c {
                let p = (z[k] - lse).exp();
                grad[[r, col, k]] = (p - f64::from(u8::from(k == label))) * inv_n;
            }
        }
    }
    Ok((sum * inv_n, grad))
}

fn depth_shapes(pred: &DepthGrid, gt: &DepthGrid) -> Result<()> {
    pred.same_shape(gt)
}

/// Mean absolute depth error over ground-truth valid pixels.
pub fn depth_l1_loss(pred: &DepthGrid, gt: &DepthGrid) -> Result<f64> {
    depth_l1_grad(pred, gt).map(|(l, _)| l)
}

pub fn depth_l1_grad(pred: &DepthGrid, gt: &DepthGrid) -> Result<(f64, Vec<f64>)> {
    depth_shapes(pred, gt)?;
    let n = gt.valid_count();
    if n == 0 {
        return Err(Error::NoEvaluablePixels);
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; pred.depth.len()];
    let mut sum = 0.0;
    for (i, g) in grad.iter_mut().enumerate() {
        if !gt.valid[i] {
            continue;
        }
        let d = gt.depth[i] - pred.depth[i];
        sum += d.abs();
        *g = -d.signum() * f64::from(u8::from(d != 0.0)) * inv_n;
    }
    Ok((sum * inv_n, grad))
}

/// Compares forward differences of prediction and ground truth along x and
/// y with an L1 penalty. The last column (row) has zero x (y) difference;
/// differences touching an invalid ground-truth pixel are skipped. The sum
/// is divided by the total pixel count.
pub fn depth_smoothness_loss(pred: &DepthGrid, gt: &DepthGrid) -> Result<f64> {
    depth_smoothness_grad(pred, gt).map(|(l, _)| l)
}

pub fn depth_smoothness_grad(pred: &DepthGrid, gt: &DepthGrid) -> Result<(f64, Vec<f64>)> {
    depth_shapes(pred, gt)?;
    let (h, w) = (gt.height, gt.width);
    if h * w < 2 {
        return Err(Error::GridTooSmall {
            height: h,
            width: w,
        });
    }
    let inv_n = 1.0 / (h * w) as f64;
    let mut grad = vec![0.0; h * w];
    let mut sum = 0.0;
    let mut term = |a: usize, b: usize, grad: &mut [f64]| {
        if !(gt.valid[a] && gt.valid[b]) {
            return;
        }
        // Residual of (∇gt - ∇pred) where ∇v = v[b] - v[a].
        let d = (gt.depth[b] - gt.depth[a]) - (pred.depth[b] - pred.depth[a]);
        sum += d.abs();
        if d != 0.0 {
            let s = d.signum() * inv_n;
            grad[b] -= s;
            grad[a] += s;
        }
    };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                term(i, i + 1, &mut grad);
            }
            if r + 1 < h {
                term(i, i + w, &mut grad);
            }
        }
    }
    Ok((sum * inv_n, grad))
}

/// `L1 + λ_smooth · L_smooth`.
pub fn depth_total_loss(pred: &DepthGrid, gt: &DepthGrid, smooth_weight: f64) -> Result<f64> {
    depth_total_grad(pred, gt, smooth_weight).map(|(l, _)| l)
}

pub fn depth_total_grad(
    pred: &DepthGrid,
    gt: &DepthGrid,
    smooth_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let (l1, mut g) = depth_l1_grad(pred, gt)?;
    let (sm, gs) = depth_smoothness_grad(pred, gt)?;
    for (a, b) in g.iter_mut().zip(gs) {
        *a += smooth_weight * b;
    }
    Ok((l1 + smooth_weight * sm, g))
}

/// Depth map from per-pixel logits through softplus.
pub fn depth_from_logits(width: usize, height: usize, logits: &[f64]) -> Result<DepthGrid> {
    DepthGrid::new(width, height, logits.iter().map(|&x| softplus(x)).collect())
}

/// Total depth loss evaluated on `softplus(logits)`, with the gradient
/// taken with respect to the logits.
pub fn depth_total_logits_grad(
    logits: &[f64],
    gt: &DepthGrid,
    smooth_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let pred = depth_from_logits(gt.width, gt.height, logits)?;
    let (loss, mut g) = depth_total_grad(&pred, gt, smooth_weight)?;
    for (gi, &x) in g.iter_mut().zip(logits) {
        *gi *= softplus_grad(x);
    }
    Ok((loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        let tiny = softplus(-100.0);
        assert!(tiny > 0.0 && (tiny / (-100f64).exp() - 1.0).abs() < 1e-12);
        assert!(softplus(1000.0).is_finite());
        assert!(softplus(-1.0) < softplus(-0.5));
    }

    fn logits(rows: &[&[f64]]) -> LogitGrid {
        let c = rows[0].len();
        Array3::from_shape_vec((1, rows.len(), c), rows.concat()).unwrap()
    }

    #[test]
    fn nll_examples() {
        let gt = LabelGrid::new(1, 1, vec![2]).unwrap();
        let perfect = logits(&[&[-50.0, -50.0, 50.0]]);
        assert!(segmentation_nll(&perfect, &gt).unwrap() < 1e-12);

        let uniform = logits(&[&[0.3; 4]]);
        let gt4 = LabelGrid::new(1, 1, vec![1]).unwrap();
        assert!((segmentation_nll(&uniform, &gt4).unwrap() - 4f64.ln()).abs() < 1e-12);

        // Pixel 1: p(gt) = 1/2 (two classes equal); pixel 2: p(gt) = 1/4.
        let l = logits(&[
            &[0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            &[0.0, 0.0, 0.0, 0.0],
        ]);
        let gt = LabelGrid::new(2, 1, vec![0, 3]).unwrap();
        let v = segmentation_nll(&l, &gt).unwrap();
        assert!((v - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
        assert!((v - 1.03972).abs() < 1e-5);
    }

    #[test]
    fn nll_ignores_and_errors() {
        let l = logits(&[&[5.0, 0.0], &[0.0, 0.0]]);
        let ign = LabelGrid::DEFAULT_IGNORE;
        let gt = LabelGrid::new(2, 1, vec![0, ign]).unwrap();
        let only_first = LabelGrid::new(1, 1, vec![0]).unwrap();
        let first = logits(&[&[5.0, 0.0]]);
        assert_eq!(
            segmentation_nll(&l, &gt).unwrap(),
            segmentation_nll(&first, &only_first).unwrap()
        );
        let all = LabelGrid::new(2, 1, vec![ign, ign]).unwrap();
        assert!(matches!(
            segmentation_nll(&l, &all),
            Err(Error::NoEvaluablePixels)
        ));
    }

    fn d(w: usize, h: usize, v: &[f64]) -> DepthGrid {
        DepthGrid::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn depth_l1_examples() {
        let gt = d(2, 1, &[1.0, 3.0]);
        assert_eq!(depth_l1_loss(&gt, &gt).unwrap(), 0.0);
        assert_eq!(depth_l1_loss(&d(2, 1, &[1.5, 3.5]), &gt).unwrap(), 0.5);
        assert_eq!(depth_l1_loss(&d(2, 1, &[2.0, 1.0]), &gt).unwrap(), 1.5);
    }

    #[test]
    fn smoothness_examples() {
        let gt = d(2, 2, &[1.0, 4.0, 2.0, 7.0]);
        let shifted = d(2, 2, &[3.5, 6.5, 4.5, 9.5]);
        assert_eq!(depth_smoothness_loss(&shifted, &gt).unwrap(), 0.0);
        assert_eq!(depth_smoothness_loss(&gt, &gt).unwrap(), 0.0);
        let row = depth_smoothness_loss(&d(2, 1, &[0.0, 0.0]), &d(2, 1, &[0.0, 2.0])).unwrap();
        assert_eq!(row, 1.0);
        assert!(matches!(
            depth_smoothness_loss(&d(1, 1, &[1.0]), &d(1, 1, &[1.0])),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn total_examples() {
        let gt = d(2, 1, &[0.0, 2.0]);
        let pred = d(2, 1, &[1.0, 1.0]);
        // L1 = 1, smoothness = |2 - 0| / 2 = 1.
        assert_eq!(depth_total_loss(&pred, &gt, 1.0).unwrap(), 2.0);
        assert_eq!(
            depth_total_loss(&pred, &gt, 0.0).unwrap(),
            depth_l1_loss(&pred, &gt).unwrap()
        );
        assert_eq!(depth_total_loss(&gt, &gt, 1.0).unwrap(), 0.0);
        let p2 = d(2, 1, &[1.0, 0.0]);
        // L1 = (1 + 2) / 2 = 1.5, smoothness = |2 - (-1)| / 2 = 1.5.
        assert_eq!(depth_total_loss(&p2, &gt, 1.0).unwrap(), 3.0);
    }
}
