use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::FeatureSet;

pub const FEATURE_MAGIC: &[u8; 5] = b"XFRF1";
const HEADER_LEN: usize = FEATURE_MAGIC.len() + 8;

/// Metadata stored next to a feature file as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub dataset_id: String,
    pub domain_label: String,
    pub sample_seed: u64,
    pub count: usize,
    pub dim: usize,
}

impl FeatureSidecar {
    pub fn of(f: &FeatureSet) -> Self {
        FeatureSidecar {
            dataset_id: f.dataset_id.clone(),
            domain_label: f.domain_label.clone(),
            sample_seed: f.sample_seed,
            count: f.len(),
            dim: f.dim,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Binary encoding: magic, `u32` count, `u32` dim, then `count × dim`
/// little-endian `f32` values.
pub fn encode_features(f: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * f.vectors.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(f.len() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim as u32).to_le_bytes());
    for v in &f.vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
        .ok_or(Error::Truncated {
            offset: bytes.len(),
        })
}

/// Decodes the payload of [`encode_features`]; metadata comes from `meta`
/// when present.
pub fn decode_features(
    bytes: &[u8],
    path: &Path,
    meta: Option<&FeatureSidecar>,
) -> Result<FeatureSet> {
    if !bytes.starts_with(FEATURE_MAGIC) {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "XFRF1",
        });
    }
    let count = read_u32(bytes, FEATURE_MAGIC.len())? as usize;
    let dim = read_u32(bytes, FEATURE_MAGIC.len() + 4)? as usize;
    let need = HEADER_LEN + 4 * count * dim;
    if bytes.len() < need {
        return Err(Error::Truncated {
            offset: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(Error::InvalidInput(format!(
            "{} trailing bytes after payload in {}",
            bytes.len() - need,
            path.display()
        )));
    }
    if let Some(m) = meta {
        if m.count != count || m.dim != dim {
            return Err(Error::SidecarMismatch {
                file: format!("{count}x{dim}"),
                sidecar: format!("{}x{}", m.count, m.dim),
            });
        }
    }
    let vectors = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
        .collect();
    let mut f = FeatureSet::new(
        dataset_name(path, meta),
        meta.map_or("", |m| &m.domain_label),
        dim,
        vectors,
    )?;
    f.sample_seed = meta.map_or(0, |m| m.sample_seed);
    Ok(f)
}

fn dataset_name(path: &Path, meta: Option<&FeatureSidecar>) -> String {
    match meta {
        Some(m) => m.dataset_id.clone(),
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    }
}

fn read_sidecar(path: &Path) -> Result<Option<FeatureSidecar>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(p)?)?))
}

fn write_sidecar(path: &Path, f: &FeatureSet) -> Result<()> {
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&FeatureSidecar::of(f))?,
    )?;
    Ok(())
}

/// Writes the binary feature file and its sidecar.
pub fn write_features(path: &Path, f: &FeatureSet) -> Result<()> {
    fs::write(path, encode_features(f))?;
    write_sidecar(path, f)
}

/// Writes one CSV row per vector (no header) plus the sidecar.
pub fn write_features_csv(path: &Path, f: &FeatureSet) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in f.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    write_sidecar(path, f)
}

pub fn read_features_csv(path: &Path) -> Result<FeatureSet> {
    let meta = read_sidecar(path)?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f32>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        rows.push(row);
    }
    let mut f = FeatureSet::from_rows(dataset_name(path, meta.as_ref()), "", &rows)?;
    if let Some(m) = meta {
        if m.count != f.len() || m.dim != f.dim {
            return Err(Error::SidecarMismatch {
                file: format!("{}x{}", f.len(), f.dim),
                sidecar: format!("{}x{}", m.count, m.dim),
            });
        }
        f.domain_label = m.domain_label;
        f.sample_seed = m.sample_seed;
    }
    Ok(f)
}

/// Loads a feature file; `.csv` files use the text encoding, everything
/// else the binary one.
pub fn load_features(path: &Path) -> Result<FeatureSet> {
    if path.extension().is_some_and(|e| e == "csv") {
        return read_features_csv(path);
    }
    let meta = read_sidecar(path)?;
    decode_features(&fs::read(path)?, path, meta.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSet {
        let mut f =
            FeatureSet::new("ds", "dom", 3, vec![0.1, -2.5, 3.0, 1e-7, 4.25, -0.0]).unwrap();
        f.sample_seed = 9;
        f
    }

    #[test]
    fn binary_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.xfrf");
        let f = sample();
        write_features(&path, &f).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_features(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn csv_matches_binary() {
        let dir = tempfile::tempdir().unwrap();
        let f = sample();
        let (bin, text) = (dir.path().join("ds.xfrf"), dir.path().join("ds.csv"));
        write_features(&bin, &f).unwrap();
        write_features_csv(&text, &f).unwrap();
        assert_eq!(load_features(&bin).unwrap(), load_features(&text).unwrap());
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = encode_features(&sample());
        let cut = &bytes[..bytes.len() - 3];
        let err = decode_features(cut, Path::new("x"), None).unwrap_err();
        assert_eq!(
            err.to_string(),
            format!("truncated payload at offset {}", cut.len())
        );
        let err = decode_features(&bytes[..7], Path::new("x"), None).unwrap_err();
        assert!(matches!(err, Error::Truncated { offset: 7 }));
    }

    #[test]
    fn rejects_bad_magic_and_trailing_bytes() {
        let mut bytes = encode_features(&sample());
        bytes[0] = b'Y';
        assert!(matches!(
            decode_features(&bytes, Path::new("x"), None),
            Err(Error::BadMagic { .. })
        ));
        let mut bytes = encode_features(&sample());
        bytes.push(0);
        assert!(matches!(
            decode_features(&bytes, Path::new("x"), None),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn sidecar_disagreement_is_an_error() {
        let mut meta = FeatureSidecar::of(&sample());
        meta.dim = 2;
        meta.count = 3;
        let err =
            decode_features(&encode_features(&sample()), Path::new("x"), Some(&meta)).unwrap_err();
        assert!(matches!(err, Error::SidecarMismatch { .. }));
    }

    #[test]
    fn csv_parse_error_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1,2\n3,oops\n").unwrap();
        assert!(matches!(
            read_features_csv(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
