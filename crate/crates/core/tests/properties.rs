use ndarray::{Array2, Array3};
use proptest::prelude::*;

use xferlab::assignment::hungarian;
use xferlab::centernet::{
    encode_detection_targets, focal_loss, gaussian_radius, masked_l1_loss, FocalParams,
};
use xferlab::dense::{depth_l1_loss, depth_smoothness_loss, segmentation_nll};
use xferlab::distance::{domain_distance, sample_features, AssignmentStrategy};
use xferlab::gains::{aggregate_levels, classify_level, kendall_tau, relative_gain, Filter, Level};
use xferlab::io::{decode_features, encode_features};
use xferlab::metrics::{average_precision, MetricValue};
use xferlab::types::box_iou;
use xferlab::{BBox, DepthGrid, FeatureSet, LabelGrid, TaskType};

fn matrix(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-50.0..50.0f64, n * n)
            .prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
    })
}

fn features(max_rows: usize, dim: usize) -> impl Strategy<Value = FeatureSet> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f32, dim), 1..max_rows)
        .prop_map(|rows| FeatureSet::from_rows("f", "d", &rows).unwrap())
}

fn bbox() -> impl Strategy<Value = BBox> {
    (
        0.0..40.0f64,
        0.0..40.0f64,
        0.5..20.0f64,
        0.5..20.0f64,
        0u16..2,
        0.0..1.0f64,
    )
        .prop_map(|(x, y, w, h, c, s)| BBox::scored(x, y, w, h, c, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn assignment_beats_every_permutation(cost in matrix(6), shift in -10.0..10.0f64) {
        let n = cost.nrows();
        let best = hungarian(&cost).unwrap();
        let identity: f64 = (0..n).map(|i| cost[[i, i]]).sum();
        let reversed: f64 = (0..n).map(|i| cost[[i, n - 1 - i]]).sum();
        prop_assert!(best.cost <= identity + 1e-9);
        prop_assert!(best.cost <= reversed + 1e-9);
        let shifted = hungarian(&(&cost + shift)).unwrap();
        prop_assert!((shifted.cost - best.cost - shift * n as f64).abs() < 1e-7);
    }

    #[test]
    fn kendall_symmetry_and_bounds(pairs in prop::collection::vec((0i32..8, 0i32..8), 2..60)) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        if let Ok(t) = kendall_tau(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&t));
            prop_assert_eq!(t, kendall_tau(&y, &x).unwrap());
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert_eq!(-t, kendall_tau(&x, &neg).unwrap());
            let cubed: Vec<f64> = x.iter().map(|v| v * v * v + 3.0).collect();
            prop_assert_eq!(t, kendall_tau(&cubed, &y).unwrap());
        }
    }

    #[test]
    fn gain_sign_follows_direction(m in 0.01..2.0f64, b in 0.01..2.0f64) {
        let seg = relative_gain(&MetricValue::new(TaskType::SemanticSegmentation, m),
            &MetricValue::new(TaskType::SemanticSegmentation, b)).unwrap();
        let depth = relative_gain(&MetricValue::new(TaskType::DepthEstimation, m),
            &MetricValue::new(TaskType::DepthEstimation, b)).unwrap();
        prop_assert_eq!(seg > 0.0, m > b);
        prop_assert_eq!(depth > 0.0, m < b);
        prop_assert_eq!(seg, -depth);
    }

    #[test]
    fn levels_are_monotone(a in -50.0..50.0f64, b in -50.0..50.0f64) {
        let rank = |l: Level| match l {
            Level::Negative => 0,
            Level::Insignificant => 1,
            Level::Positive => 2,
            Level::VeryPositive => 3,
        };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rank(classify_level(lo)) <= rank(classify_level(hi)));
    }

    #[test]
    fn level_shares_are_consistent(gains in prop::collection::vec((-30.0..30.0f64, any::<bool>(), any::<bool>()), 1..40)) {
        let records: Vec<_> = gains
            .iter()
            .enumerate()
            .map(|(i, &(r, wd, wt))| record(i, r, wd, wt))
            .collect();
        for d in Filter::ALL {
            for t in Filter::ALL {
                if let Ok(row) = aggregate_levels(&records, d, t) {
                    prop_assert!(row.pct_vp <= row.pct_p);
                    prop_assert!(row.pct_p + row.pct_n <= 100.0 + 1e-9);
                    prop_assert!(row.count > 0);
                }
            }
        }
        let all = aggregate_levels(&records, Filter::All, Filter::All).unwrap();
        prop_assert_eq!(all.count, records.len());
    }

    #[test]
    fn distances_identity_inclusion_and_order(t in features(12, 3), extra in features(12, 3)) {
        use AssignmentStrategy::*;
        for s in AssignmentStrategy::ALL {
            prop_assert_eq!(domain_distance(&t, &t, s).unwrap(), 0.0);
        }
        let mut rows: Vec<Vec<f32>> = extra.rows().map(<[f32]>::to_vec).collect();
        rows.extend(t.rows().map(<[f32]>::to_vec));
        let sup = FeatureSet::from_rows("s", "d", &rows).unwrap();
        prop_assert_eq!(domain_distance(&t, &sup, TargetToClosestSource).unwrap(), 0.0);
        let a = domain_distance(&t, &extra, SymmetricAverage).unwrap();
        prop_assert_eq!(a, domain_distance(&extra, &t, SymmetricAverage).unwrap());
        prop_assert_eq!(
            domain_distance(&t, &extra, TargetToClosestSource).unwrap(),
            domain_distance(&extra, &t, SourceToClosestTarget).unwrap()
        );
        if t.len() == extra.len() {
            let emd = domain_distance(&t, &extra, EmdOneToOne).unwrap();
            prop_assert!(emd + 1e-9 >= domain_distance(&t, &extra, TargetToClosestSource).unwrap());
        }
    }

    #[test]
    fn sampling_is_a_deterministic_subset(f in features(30, 2), n in 1usize..40, seed in any::<u64>()) {
        let a = sample_features(&f, n, seed).unwrap();
        prop_assert_eq!(&a, &sample_features(&f, n, seed).unwrap());
        prop_assert_eq!(a.len(), n.min(f.len()));
        for row in a.rows() {
            prop_assert!(f.rows().any(|r| r == row));
        }
    }

    #[test]
    fn feature_files_round_trip(f in features(20, 5)) {
        let bytes = encode_features(&f);
        let back = decode_features(&bytes, std::path::Path::new("mem"), None).unwrap();
        prop_assert_eq!(&back.vectors, &f.vectors);
        prop_assert_eq!(encode_features(&back), bytes);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let ab = box_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, box_iou(&b, &a));
        prop_assert!((box_iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ap_is_a_probability(dets in prop::collection::vec(bbox(), 0..6), gts in prop::collection::vec(bbox(), 1..6)) {
        let ap = average_precision(std::slice::from_ref(&dets), std::slice::from_ref(&gts), 0.5, gts[0].class_id).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        let perfect = average_precision(std::slice::from_ref(&gts), std::slice::from_ref(&gts), 0.5, gts[0].class_id).unwrap();
        prop_assert!((perfect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heatmaps_peak_at_centres(boxes in prop::collection::vec(bbox(), 1..5)) {
        let t = encode_detection_targets(&boxes, 2, 64, 64, 4).unwrap();
        prop_assert!(t.heatmap.iter().all(|v| (0.0..=1.0).contains(v)));
        for c in &t.centers {
            prop_assert_eq!(t.heatmap[[c.class_id as usize, c.row, c.col]], 1.0);
        }
        let pred = t.heatmap.mapv(|v| v.clamp(0.05, 0.95));
        prop_assert!(focal_loss(&pred, &t.heatmap, FocalParams::default()).unwrap() >= 0.0);
        let mut cells: Vec<(usize, usize)> = t.centers.iter().map(|c| (c.row, c.col)).collect();
        cells.sort_unstable();
        cells.dedup();
        if cells.len() == t.centers.len() {
            prop_assert!(masked_l1_loss(&t.offset, &t.offset_targets()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn radius_grows_with_box(w in 1.0..50.0f64, h in 1.0..50.0f64, k in 1.0..3.0f64) {
        let r = gaussian_radius(w, h, 0.7);
        prop_assert!(r >= 0.0);
        prop_assert!(gaussian_radius(w * k, h * k, 0.7) + 1e-9 >= r);
        prop_assert!((gaussian_radius(h, w, 0.7) - r).abs() < 1e-9);
    }

    #[test]
    fn dense_losses_are_non_negative(
        (h, w, c, logits, labels, depth, gt) in (1usize..5, 2usize..5, 2usize..4).prop_flat_map(|(h, w, c)| (
            Just(h), Just(w), Just(c),
            prop::collection::vec(-4.0..4.0f64, h * w * c),
            prop::collection::vec(0u16..c as u16, h * w),
            prop::collection::vec(0.0..5.0f64, h * w),
            prop::collection::vec(0.0..5.0f64, h * w),
        ))
    ) {
        let logits = Array3::from_shape_vec((h, w, c), logits).unwrap();
        let labels = LabelGrid::new(w, h, labels).unwrap();
        prop_assert!(segmentation_nll(&logits, &labels).unwrap() >= 0.0);
        let pred = DepthGrid::new(w, h, depth).unwrap();
        let gt = DepthGrid::new(w, h, gt).unwrap();
        prop_assert!(depth_l1_loss(&pred, &gt).unwrap() >= 0.0);
        prop_assert!(depth_smoothness_loss(&pred, &gt).unwrap() >= 0.0);
        prop_assert_eq!(depth_l1_loss(&gt, &gt).unwrap(), 0.0);
        let shifted = DepthGrid::new(w, h, gt.depth.iter().map(|d| d + 1.5).collect()).unwrap();
        prop_assert!(depth_smoothness_loss(&shifted, &gt).unwrap() < 1e-12);
    }
}

fn record(i: usize, r: f64, within_domain: bool, within_task: bool) -> xferlab::gains::GainRecord {
    use xferlab::gains::{GainRecord, Regime, Source, TaskRef, TransferResult};
    let target = TaskType::SemanticSegmentation;
    let source = if within_task {
        target
    } else {
        TaskType::DepthEstimation
    };
    GainRecord::from_result(TransferResult {
        key: format!("k{i}"),
        source: Source::Task(TaskRef::new(format!("s{i}"), source)),
        target: TaskRef::new("t", target),
        metric: MetricValue::new(target, 0.5 * (1.0 + r / 100.0)),
        baseline_metric: MetricValue::new(target, 0.5),
        regime: Regime::SmallTarget,
        source_domain: if within_domain { "a" } else { "b" }.into(),
        target_domain: "a".into(),
        source_train_size: 1,
        seed: 0,
    })
    .unwrap()
}
