//! Runs the full toy suite through the file-backed pipeline: data,
//! backbones, chains, distances, analysis and the text report.
//!
//! Usage: `cargo run --release --example transfer_suite [OUT_DIR]`

use std::time::Instant;

use xferlab::config::default_toy_suite;
use xferlab::distance::AssignmentStrategy;
use xferlab::harness::{self, Workspace};

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "xferlab-suite".into());
    let ws = Workspace::new(&out);
    let cfg = default_toy_suite();
    let start = Instant::now();

    println!("{} datasets written", harness::gen_data(&cfg, &ws)?);
    println!("{} backbones trained", harness::train_sources(&cfg, &ws)?);
    let summary = harness::run_chains(&cfg, &ws)?;
    println!(
        "{} results written, {} already present",
        summary.written, summary.skipped
    );
    let tables = harness::compute_distances(&cfg, &ws, &AssignmentStrategy::ALL)?;
    println!("{} distance tables", tables.len());

    let analysis = harness::analyze(&ws)?;
    let mean = |within: bool| {
        let gains: Vec<f64> = analysis
            .records
            .iter()
            .filter(|r| r.within_domain == within)
            .map(|r| r.gain)
            .collect();
        gains.iter().sum::<f64>() / gains.len().max(1) as f64
    };
    println!(
        "mean gain within domain {:+.2}, across domains {:+.2}",
        mean(true),
        mean(false)
    );
    print!("{}", harness::report(&ws, true)?);
    println!("done in {:.1?}; artifacts in {out}", start.elapsed());
    Ok(())
}
