use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::TransferResult;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Line {
    schema_version: u32,
    #[serde(flatten)]
    result: TransferResult,
}

/// Append-only JSON-lines file of transfer results, one self-describing
/// record per line, de-duplicated by experiment key.
#[derive(Debug, Clone)]
pub struct ResultStore {
    path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AppendSummary {
    pub written: usize,
    pub skipped: usize,
}

pub fn encode_result(result: &TransferResult) -> Result<String> {
    Ok(serde_json::to_string(&Line {
        schema_version: SCHEMA_VERSION,
        result: result.clone(),
    })?)
}

/// Parses one store line; `line_no` is 1-based and only used in errors.
pub fn decode_result(line: &str, line_no: usize) -> Result<TransferResult> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: Option<u32>,
    }
    let parse_err = |e: serde_json::Error| Error::Parse {
        line: line_no,
        message: e.to_string(),
    };
    let v: Version = serde_json::from_str(line).map_err(parse_err)?;
    match v.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(Error::SchemaVersion {
                found,
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(Error::Parse {
                line: line_no,
                message: "missing schema_version".into(),
            })
        }
    }
    let l: Line = serde_json::from_str(line).map_err(parse_err)?;
    Ok(l.result)
}

impl ResultStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ResultStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every stored record in file order; a missing file is an empty store.
    pub fn load(&self) -> Result<Vec<TransferResult>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        fs::read_to_string(&self.path)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| decode_result(l, i + 1))
            .collect()
    }

    pub fn keys(&self) -> Result<HashSet<String>> {
        Ok(self.load()?.into_iter().map(|r| r.key).collect())
    }

    /// Appends the results whose keys are not stored yet. Duplicates are
    /// skipped with a warning.
    pub fn append(&self, results: &[TransferResult]) -> Result<AppendSummary> {
        let mut seen = self.keys()?;
        let mut text = String::new();
        let mut summary = AppendSummary::default();
        for r in results {
            if !seen.insert(r.key.clone()) {
                log::warn!("duplicate experiment key {}; skipping", r.key);
                summary.skipped += 1;
                continue;
            }
            text.push_str(&encode_result(r)?);
            text.push('\n');
            summary.written += 1;
        }
        if summary.written > 0 {
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)?;
            f.write_all(text.as_bytes())?;
        }
        Ok(summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::{Regime, Source, TaskRef};
    use crate::metrics::MetricValue;
    use crate::types::TaskType;

    fn result(key: &str, value: f64) -> TransferResult {
        let seg = TaskType::SemanticSegmentation;
        TransferResult {
            key: key.into(),
            source: Source::Task(TaskRef::new("s", seg)),
            target: TaskRef::new("t", seg),
            metric: MetricValue::new(seg, value),
            baseline_metric: MetricValue::new(seg, 0.1 + 0.2),
            regime: Regime::SmallTarget,
            source_domain: "a".into(),
            target_domain: "b".into(),
            source_train_size: 12,
            seed: 3,
        }
    }

    #[test]
    fn lines_roundtrip_exactly() {
        let r = result("k", 1.0 / 3.0);
        let line = encode_result(&r).unwrap();
        assert!(line.contains("\"schema_version\":1"));
        assert_eq!(decode_result(&line, 1).unwrap(), r);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let line = encode_result(&result("k", 0.5))
            .unwrap()
            .replace("\"schema_version\":1", "\"schema_version\":2");
        assert!(matches!(
            decode_result(&line, 1),
            Err(Error::SchemaVersion {
                found: 2,
                expected: 1
            })
        ));
        assert!(matches!(
            decode_result("{\"key\":\"k\"}", 4),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(matches!(
            decode_result("not json", 5),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn append_skips_duplicates_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::new(dir.path().join("nested/results.jsonl"));
        assert!(store.load().unwrap().is_empty());
        let batch = [result("a", 0.4), result("b", 0.5), result("a", 0.9)];
        assert_eq!(
            store.append(&batch).unwrap(),
            AppendSummary {
                written: 2,
                skipped: 1
            }
        );
        let bytes = fs::read(store.path()).unwrap();
        assert_eq!(
            store.append(&batch).unwrap(),
            AppendSummary {
                written: 0,
                skipped: 3
            }
        );
        assert_eq!(fs::read(store.path()).unwrap(), bytes);
        let loaded = store.load().unwrap();
        assert_eq!(loaded, vec![batch[0].clone(), batch[1].clone()]);
    }
}
