//! Turns a handful of transfer results into gain, level, best-source and
//! correlation tables.

use xferlab::distance::{AssignmentStrategy, DistanceMatrix};
use xferlab::gains::{
    aggregate_all, best_source_per_target, factor_correlations, gain_records, Regime, Source,
    TaskRef, TransferResult,
};
use xferlab::metrics::MetricValue;
use xferlab::report::{aggregate_table, best_table, correlation_table, gain_table};
use xferlab::TaskType;

fn result(
    source: (&str, TaskType),
    target: (&str, TaskType),
    metric: f64,
    baseline: f64,
) -> TransferResult {
    let domain = |id: &str| id.split('-').next().unwrap().to_string();
    TransferResult {
        key: format!("{}->{}", source.0, target.0),
        source: Source::Task(TaskRef::new(source.0, source.1)),
        target: TaskRef::new(target.0, target.1),
        metric: MetricValue::new(target.1, metric),
        baseline_metric: MetricValue::new(target.1, baseline),
        regime: Regime::SmallTarget,
        source_domain: domain(source.0),
        target_domain: domain(target.0),
        source_train_size: 150,
        seed: 0,
    }
}

fn main() -> anyhow::Result<()> {
    use TaskType::*;
    let results = [
        result(
            ("city-a", SemanticSegmentation),
            ("city-b", SemanticSegmentation),
            0.62,
            0.50,
        ),
        result(
            ("indoor-a", SemanticSegmentation),
            ("city-b", SemanticSegmentation),
            0.47,
            0.50,
        ),
        result(
            ("city-a", DepthEstimation),
            ("city-b", DepthEstimation),
            0.90,
            1.00,
        ),
        result(
            ("indoor-a", DepthEstimation),
            ("city-b", DepthEstimation),
            1.01,
            1.00,
        ),
        result(
            ("city-b", SemanticSegmentation),
            ("indoor-a", SemanticSegmentation),
            0.41,
            0.40,
        ),
        result(
            ("city-a", DepthEstimation),
            ("indoor-a", SemanticSegmentation),
            0.38,
            0.40,
        ),
    ];
    let records = gain_records(&results)?;
    let ids = ["city-a", "city-b", "indoor-a"].map(String::from).to_vec();
    let distances = [DistanceMatrix {
        strategy: AssignmentStrategy::TargetToClosestSource,
        ids,
        values: vec![0.0, 0.4, 2.0, 0.3, 0.0, 2.2, 1.8, 1.9, 0.0],
    }];

    print!("{}", gain_table(&records).to_text(true));
    print!(
        "{}",
        aggregate_table(&aggregate_all(&records)).to_text(false)
    );
    print!(
        "{}",
        best_table(&best_source_per_target(&records)).to_text(false)
    );
    let correlations = factor_correlations(&records, &distances)?;
    print!("{}", correlation_table(&correlations).to_text(false));
    Ok(())
}
