//! Encodes boxes and keypoints into heatmap targets, then decodes a
//! perfect prediction back into objects.

use xferlab::centernet::{
    decode_detections, decode_keypoints, encode_detection_targets, encode_keypoint_targets,
    focal_loss, gaussian_radius, nms, DecodeParams, FocalParams, KeypointDecodeParams,
};
use xferlab::{BBox, Keypoint, KeypointInstance};

fn main() -> anyhow::Result<()> {
    let stride = 4;
    let boxes = [
        BBox::new(4.0, 6.0, 20.0, 12.0, 0)?,
        BBox::new(34.0, 30.0, 16.0, 24.0, 1)?,
    ];
    for b in &boxes {
        println!(
            "box {:>4.1}x{:<4.1} radius {:.2}",
            b.w,
            b.h,
            gaussian_radius(b.w / stride as f64, b.h / stride as f64, 0.7)
        );
    }

    let targets = encode_detection_targets(&boxes, 2, 64, 64, stride)?;
    println!(
        "heatmap {:?}, {} centres",
        targets.heatmap.dim(),
        targets.num_centers()
    );
    let ideal = targets.ideal_prediction();
    let loss = focal_loss(
        &ideal.heatmap.mapv(|v| v.clamp(1e-4, 1.0 - 1e-4)),
        &targets.heatmap,
        FocalParams::default(),
    )?;
    println!("focal loss of a near-perfect heatmap {loss:.5}");

    let params = DecodeParams {
        top_t: 10,
        stride,
        score_threshold: 0.5,
    };
    for d in nms(&decode_detections(&ideal, params), 0.3) {
        println!(
            "decoded class {} at ({:.1}, {:.1}) {:.1}x{:.1} score {:.2}",
            d.class_id, d.x, d.y, d.w, d.h, d.score
        );
    }

    let people: Vec<KeypointInstance> = boxes
        .iter()
        .map(|&bbox| {
            let (cx, cy) = bbox.center();
            KeypointInstance {
                keypoints: vec![
                    Keypoint::visible(cx - 4.0, cy - 3.0),
                    Keypoint::visible(cx + 4.0, cy + 3.0),
                ],
                bbox: BBox {
                    class_id: 0,
                    ..bbox
                },
                score: 1.0,
            }
        })
        .collect();
    let (kp, det) = encode_keypoint_targets(&people, 2, 1, 64, 64, stride)?;
    let kp_params = KeypointDecodeParams {
        detection: params,
        ..Default::default()
    };
    for inst in decode_keypoints(&kp.ideal_prediction(&det), kp_params) {
        let pts: Vec<String> = inst
            .keypoints
            .iter()
            .map(|k| format!("({:.1}, {:.1})", k.x, k.y))
            .collect();
        println!("instance score {:.2}: {}", inst.score, pts.join(" "));
    }
    Ok(())
}
