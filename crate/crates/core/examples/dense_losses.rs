//! Segmentation cross-entropy and the depth L1 + smoothness objective.

use ndarray::Array3;
use xferlab::dense::{
    depth_from_logits, depth_smoothness_loss, depth_total_loss, segmentation_nll, softplus,
};
use xferlab::{DepthGrid, LabelGrid};

fn main() -> anyhow::Result<()> {
    let labels = LabelGrid::new(3, 2, vec![0, 1, 2, 2, 1, 0])?;
    let confident = Array3::from_shape_fn((2, 3, 3), |(r, c, k)| {
        if k == labels.get(r, c) as usize {
            4.0
        } else {
            -4.0
        }
    });
    let flat = Array3::zeros((2, 3, 3));
    println!(
        "NLL confident {:.4}  uniform {:.4}",
        segmentation_nll(&confident, &labels)?,
        segmentation_nll(&flat, &labels)?
    );

    let gt = DepthGrid::new(3, 2, vec![1.0, 1.5, 2.0, 1.0, 1.5, 2.0])?;
    let logits: Vec<f64> = gt
        .depth
        .iter()
        .map(|d| (d.exp() - 1.0).ln() + 0.3)
        .collect();
    let pred = depth_from_logits(3, 2, &logits)?;
    println!("softplus(0) = {:.4}", softplus(0.0));
    println!("smoothness {:.5}", depth_smoothness_loss(&pred, &gt)?);
    for weight in [0.0, 0.1, 1.0] {
        println!(
            "total loss, smoothness weight {weight}: {:.5}",
            depth_total_loss(&pred, &gt, weight)?
        );
    }
    Ok(())
}
