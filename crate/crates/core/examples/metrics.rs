//! Evaluates each task metric on hand-made predictions.

use xferlab::metrics::{
    average_precision, coco_map, depth_delta, depth_rmse, instance_scale, keypoint_ap50, mean_iou,
    oks, DEFAULT_KEYPOINT_SIGMA,
};
use xferlab::{BBox, DepthGrid, Keypoint, KeypointInstance, LabelGrid};

fn main() -> anyhow::Result<()> {
    let gt = LabelGrid::new(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 2])?;
    let pred = LabelGrid::new(4, 2, vec![0, 1, 1, 1, 0, 0, 2, 2])?;
    let miou = mean_iou(&pred, &gt, 3)?;
    println!(
        "mIoU {:.4}  per class {:?}",
        miou.metric.value, miou.per_class
    );

    let truth = vec![vec![
        BBox::new(2.0, 2.0, 10.0, 10.0, 0)?,
        BBox::new(20.0, 4.0, 8.0, 12.0, 1)?,
    ]];
    let dets = vec![vec![
        BBox::scored(3.0, 2.0, 10.0, 10.0, 0, 0.9)?,
        BBox::scored(30.0, 30.0, 5.0, 5.0, 0, 0.6)?,
        BBox::scored(20.0, 5.0, 8.0, 11.0, 1, 0.8)?,
    ]];
    for class in 0..2 {
        println!(
            "AP50 class {class}: {:?}",
            average_precision(&dets, &truth, 0.5, class)
        );
    }
    println!("mAP@[.5:.95] {:.4}", coco_map(&dets, &truth)?.value);

    let person = |dx: f64| KeypointInstance {
        keypoints: vec![
            Keypoint::visible(5.0 + dx, 5.0),
            Keypoint::visible(9.0, 12.0 + dx),
            Keypoint::absent(),
        ],
        bbox: BBox::new(2.0, 2.0, 10.0, 14.0, 0).unwrap(),
        score: 0.7,
    };
    let sigmas = [DEFAULT_KEYPOINT_SIGMA; 3];
    let reference = person(0.0);
    for dx in [0.0, 1.0, 3.0] {
        let s = oks(&person(dx), &reference, instance_scale(&reference), &sigmas)?;
        println!("OKS with {dx} px shift: {s:.4}");
    }
    let ap = keypoint_ap50(&[vec![person(1.0)]], &[vec![reference.clone()]], &sigmas)?;
    println!("keypoint AP50 {:.4}", ap.value);

    let depth_gt = DepthGrid::with_mask(3, 1, vec![1.0, 2.0, 4.0], vec![true, true, false])?;
    let depth_pred = DepthGrid::new(3, 1, vec![1.1, 2.5, 0.0])?;
    println!(
        "depth RMSE {:.4}  delta<1.25 {:.4}",
        depth_rmse(&depth_pred, &depth_gt)?.value,
        depth_delta(&depth_pred, &depth_gt, 1.25)?.value
    );
    Ok(())
}
