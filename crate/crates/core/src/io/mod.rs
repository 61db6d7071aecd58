//! On-disk formats: binary/CSV feature files, binary grids, the JSON-lines
//! result store and plain JSON documents.

mod features;
mod grid;
mod store;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub use features::{
    decode_features, encode_features, load_features, read_features_csv, sidecar_path,
    write_features, write_features_csv, FeatureSidecar, FEATURE_MAGIC,
};
pub use grid::{decode_grid, encode_grid, read_grid, write_grid, Grid, GridData, GRID_MAGIC};
pub use store::{decode_result, encode_result, AppendSummary, ResultStore, SCHEMA_VERSION};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
