//! Trains one backbone on several datasets at once and measures how far
//! apart the datasets sit in its embedding space.

use xferlab::config::default_toy_suite;
use xferlab::distance::{distance_matrix, AssignmentStrategy};
use xferlab::toy::{embed_features, train_multisource, Backbone};
use xferlab::TaskType;

fn main() -> anyhow::Result<()> {
    let cfg = default_toy_suite();
    let ids = ["alpha-a", "alpha-b", "broad-a", "delta-a"];
    let datasets = ids
        .iter()
        .map(|id| cfg.generate(cfg.dataset_config(id)?))
        .collect::<xferlab::Result<Vec<_>>>()?;
    let pretrained = Backbone::init(datasets[0].geometry.patch_dim(), cfg.hidden, 0);
    let pairs: Vec<_> = datasets
        .iter()
        .map(|d| (d, TaskType::SemanticSegmentation))
        .collect();
    let ms = train_multisource(&pretrained, &pairs, &cfg.stages.source, 0.1)?;
    println!(
        "loss {:.4} -> {:.4}",
        ms.trace[0],
        ms.trace[ms.trace.len() - 1]
    );

    let features = datasets
        .iter()
        .map(|d| embed_features(&ms.backbone, d, d.train.len(), 0))
        .collect::<xferlab::Result<Vec<_>>>()?;
    for strategy in [
        AssignmentStrategy::TargetToClosestSource,
        AssignmentStrategy::SourceToClosestTarget,
    ] {
        let table = distance_matrix(&features, strategy, 200, 0)?;
        println!("\n{strategy} (rows are targets)");
        println!(
            "{:>8} {}",
            "",
            table
                .ids
                .iter()
                .map(|s| format!("{s:>8}"))
                .collect::<String>()
        );
        for (i, id) in table.ids.iter().enumerate() {
            let row: String = (0..table.len())
                .map(|j| format!("{:8.3}", table.at(i, j)))
                .collect();
            println!("{id:>8} {row}");
        }
    }
    Ok(())
}
