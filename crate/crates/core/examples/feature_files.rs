//! Writes and reads feature sets and grids in both on-disk formats.

use ndarray::Array3;
use xferlab::io::{
    load_features, read_features_csv, read_grid, sidecar_path, write_features, write_features_csv,
    write_grid, Grid,
};
use xferlab::{DepthGrid, FeatureSet, LabelGrid};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("xferlab-feature-files-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let features = FeatureSet::from_rows(
        "city-a",
        "city",
        &[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]],
    )?;
    let binary = dir.join("city-a.xfrf");
    write_features(&binary, &features)?;
    println!("{} + {}", binary.display(), sidecar_path(&binary).display());
    let back = load_features(&binary)?;
    println!(
        "binary round trip exact: {}",
        back.vectors == features.vectors
    );

    let text = dir.join("city-a.csv");
    write_features_csv(&text, &features)?;
    println!(
        "csv round trip exact: {}",
        read_features_csv(&text)?.vectors == features.vectors
    );

    let image = Array3::from_shape_fn((2, 3, 3), |(r, c, k)| (r * 9 + c * 3 + k) as f64 / 18.0);
    let grids = [
        ("image", Grid::from_image(&image)),
        (
            "labels",
            Grid::from_labels(&LabelGrid::new(3, 2, vec![0, 1, 1, 2, 2, 0])?),
        ),
        (
            "depth",
            Grid::from_depth(&DepthGrid::new(3, 2, vec![1.0, 1.2, 1.4, 2.0, 2.2, 2.4])?),
        ),
    ];
    for (name, grid) in grids {
        let path = dir.join(format!("{name}.xfrg"));
        write_grid(&path, &grid)?;
        let loaded = read_grid(&path)?;
        println!(
            "{name:>6}: {}x{}x{} {} bytes, equal {}",
            loaded.height,
            loaded.width,
            loaded.channels,
            std::fs::metadata(&path)?.len(),
            loaded == grid
        );
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
