//! Compares synthetic feature clouds under every assignment strategy.

use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xferlab::assignment::hungarian;
use xferlab::distance::{distance_matrix, domain_distance, AssignmentStrategy};
use xferlab::FeatureSet;

fn cloud(id: &str, centre: [f32; 2], spread: f32, n: usize, seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| {
            centre
                .iter()
                .map(|c| c + spread * rng.random_range(-1.0..1.0f32))
                .collect()
        })
        .collect();
    FeatureSet::from_rows(id, id, &rows).unwrap()
}

fn main() -> anyhow::Result<()> {
    let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
    let best = hungarian(&cost)?;
    println!("assignment {:?} cost {}", best.row_to_col, best.cost);

    let narrow = cloud("narrow", [0.0, 0.0], 0.5, 60, 1);
    let wide = cloud("wide", [0.0, 0.0], 3.0, 60, 2);
    let far = cloud("far", [6.0, 6.0], 0.5, 60, 3);
    for strategy in AssignmentStrategy::ALL {
        println!(
            "{strategy:>28}: narrow|wide {:.3}  wide|narrow {:.3}  narrow|far {:.3}",
            domain_distance(&narrow, &wide, strategy)?,
            domain_distance(&wide, &narrow, strategy)?,
            domain_distance(&narrow, &far, strategy)?
        );
    }

    let table = distance_matrix(
        &[narrow, wide, far],
        AssignmentStrategy::TargetToClosestSource,
        40,
        0,
    )?;
    println!("\n{} (rows are targets)", table.strategy);
    for (i, id) in table.ids.iter().enumerate() {
        let row: Vec<String> = (0..table.len())
            .map(|j| format!("{:7.3}", table.at(i, j)))
            .collect();
        println!("{id:>7} {}", row.join(" "));
    }
    Ok(())
}
