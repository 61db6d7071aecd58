//! Appearance-based domain distance between datasets.
//!
//! `D(T|S)` averages, over target embeddings, the Euclidean distance to a
//! matched source embedding. The matching rule is the [`AssignmentStrategy`];
//! the default nearest-source rule measures how well the source covers
//! (includes) the target and is asymmetric.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::error::{Error, Result};
use crate::types::FeatureSet;

/// Number of images sampled per dataset when comparing domains.
pub const DEFAULT_SAMPLE_SIZE: usize = 1000;

/// Cap on the sample size used with [`AssignmentStrategy::EmdOneToOne`] by
/// the command line tool (the solver is cubic).
pub const DEFAULT_EMD_CAP: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentStrategy {
    /// Optimal one-to-one matching (earth mover's distance on equal sets).
    EmdOneToOne,
    /// Each target sample to its nearest source sample.
    TargetToClosestSource,
    /// Each source sample to its nearest target sample.
    SourceToClosestTarget,
    /// Mean of the two nearest-neighbour directions.
    SymmetricAverage,
}

impl AssignmentStrategy {
    pub const ALL: [AssignmentStrategy; 4] = [
        AssignmentStrategy::EmdOneToOne,
        AssignmentStrategy::TargetToClosestSource,
        AssignmentStrategy::SourceToClosestTarget,
        AssignmentStrategy::SymmetricAverage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AssignmentStrategy::EmdOneToOne => "emd",
            AssignmentStrategy::TargetToClosestSource => "target-to-source",
            AssignmentStrategy::SourceToClosestTarget => "source-to-target",
            AssignmentStrategy::SymmetricAverage => "symmetric",
        }
    }
}

impl fmt::Display for AssignmentStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssignmentStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emd" | "emd-one-to-one" => Ok(AssignmentStrategy::EmdOneToOne),
            "target-to-source" | "inclusion" => Ok(AssignmentStrategy::TargetToClosestSource),
            "source-to-target" => Ok(AssignmentStrategy::SourceToClosestTarget),
            "symmetric" | "symmetric-average" => Ok(AssignmentStrategy::SymmetricAverage),
            other => Err(Error::InvalidInput(format!(
                "unknown assignment strategy {other:?}"
            ))),
        }
    }
}

/// Deterministic uniform sample of `n` rows without replacement.
///
/// Runs a partial Fisher–Yates shuffle driven by `ChaCha8Rng` seeded with
/// `seed` (position `i` swaps with `i + next_u64() % (N - i)`), then returns
/// the chosen rows in their original order. `n ≥ N` returns the whole set.
pub fn sample_features(features: &FeatureSet, n: usize, seed: u64) -> Result<FeatureSet> {
    let total = features.len();
    if total == 0 {
        return Err(Error::EmptyFeatureSet);
    }
    if n >= total {
        return Ok(FeatureSet {
            sample_seed: seed,
            ..features.clone()
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..n {
        let j = i + (rng.next_u64() % (total - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    let vectors = chosen
        .iter()
        .flat_map(|&i| features.row(i).iter().copied())
        .collect();
    Ok(FeatureSet {
        vectors,
        sample_seed: seed,
        ..features.clone()
    })
}

fn euclid(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `|a| × |b|` matrix of Euclidean distances.
pub fn pairwise_distances(a: &FeatureSet, b: &FeatureSet) -> Result<Array2<f64>> {
    if a.dim != b.dim {
        return Err(Error::ShapeMismatch(format!(
            "feature dimension {} vs {}",
            a.dim, b.dim
        )));
    }
    Ok(Array2::from_shape_fn((a.len(), b.len()), |(i, j)| {
        euclid(a.row(i), b.row(j))
    }))
}

fn mean_row_min(d: &Array2<f64>) -> f64 {
    let sum: f64 = d
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .sum();
    sum / d.nrows() as f64
}

/// Domain distance `D(target | source)` under the given matching rule.
pub fn domain_distance(
    target: &FeatureSet,
    source: &FeatureSet,
    strategy: AssignmentStrategy,
) -> Result<f64> {
    if target.is_empty() || source.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    let d = pairwise_distances(target, source)?;
    match strategy {
        AssignmentStrategy::TargetToClosestSource => Ok(mean_row_min(&d)),
        AssignmentStrategy::SourceToClosestTarget => Ok(mean_row_min(&d.t().to_owned())),
        AssignmentStrategy::SymmetricAverage => {
            Ok((mean_row_min(&d) + mean_row_min(&d.t().to_owned())) / 2.0)
        }
        AssignmentStrategy::EmdOneToOne => {
            if target.len() != source.len() {
                return Err(Error::UnequalSampleCounts {
                    target: target.len(),
                    source_len: source.len(),
                });
            }
            Ok(hungarian(&d)?.cost / target.len() as f64)
        }
    }
}

/// Asymmetric dataset distance table; rows are targets, columns sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub strategy: AssignmentStrategy,
    pub ids: Vec<String>,
    /// Row-major `ids.len()²` values.
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn at(&self, target: usize, source: usize) -> f64 {
        self.values[target * self.ids.len() + source]
    }

    fn index(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Distance of `target` given `source`, looked up by dataset id.
    pub fn get(&self, target: &str, source: &str) -> Option<f64> {
        Some(self.at(self.index(target)?, self.index(source)?))
    }
}

/// Samples every dataset once (the same sample serves as target and as
/// source) and fills the full ordered-pair table.
pub fn distance_matrix(
    all: &[FeatureSet],
    strategy: AssignmentStrategy,
    n: usize,
    seed: u64,
) -> Result<DistanceMatrix> {
    let sampled = all
        .iter()
        .map(|f| sample_features(f, n, seed))
        .collect::<Result<Vec<_>>>()?;
    let rows = sampled
        .par_iter()
        .map(|t| {
            sampled
                .iter()
                .map(|s| domain_distance(t, s, strategy))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceMatrix {
        strategy,
        ids: all.iter().map(|f| f.dataset_id.clone()).collect(),
        values: rows.concat(),
    })
}
