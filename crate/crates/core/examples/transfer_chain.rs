//! Runs one pre-train → source → target chain on the toy suite.

use xferlab::config::default_toy_suite;
use xferlab::gains::{classify_level, relative_gain};
use xferlab::toy::run_chain;
use xferlab::TaskType;

fn main() -> anyhow::Result<()> {
    let cfg = default_toy_suite();
    let pretrain = cfg.generate_pretrain()?;
    let source = cfg.generate(cfg.dataset_config("alpha-a")?)?;
    let target = cfg.generate(cfg.dataset_config("alpha-b")?)?;
    let settings = cfg.settings();

    for task in [TaskType::SemanticSegmentation, TaskType::DepthEstimation] {
        let r = run_chain(&pretrain, (&source, task), (&target, task), &settings, 0)?;
        let gain = relative_gain(&r.metric, &r.baseline_metric)?;
        println!(
            "{task:?}: {} -> {}  metric {:.4}  baseline {:.4}  gain {gain:+.2}% {}",
            source.id,
            target.id,
            r.metric.value,
            r.baseline_metric.value,
            classify_level(gain).tag()
        );
    }
    Ok(())
}
