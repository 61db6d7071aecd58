use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};

use super::{kendall_tau, GainRecord};

/// Rank correlation of the gains against one candidate factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTau {
    pub factor: String,
    /// `None` when the factor takes a single value over all records.
    pub tau: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<FactorTau>,
}

impl CorrelationReport {
    pub fn tau(&self, factor: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.factor == factor)
            .and_then(|r| r.tau)
    }
}

/// Kendall τ between gains and negated distance (so that a positive τ
/// means closer domains transfer better) for each distance table, plus τ
/// between gains and source training-set size.
///
/// A distance table that is constant over the records is an error; a
/// constant source size is reported as `tau = None`.
pub fn factor_correlations(
    records: &[GainRecord],
    distances: &[DistanceMatrix],
) -> Result<CorrelationReport> {
    let gains: Vec<f64> = records.iter().map(|r| r.gain).collect();
    let mut rows = Vec::with_capacity(distances.len() + 1);
    for dm in distances {
        let neg: Vec<f64> = records
            .iter()
            .map(|r| {
                let source = r.source().ok_or_else(|| {
                    Error::InvalidInput(format!("{}: baseline record", r.result.key))
                })?;
                let target = &r.result.target.dataset;
                dm.get(target, &source.dataset)
                    .map(|d| -d)
                    .ok_or_else(|| Error::MissingPair {
                        target_id: target.clone(),
                        source_id: source.dataset.clone(),
                    })
            })
            .collect::<Result<_>>()?;
        let tau = kendall_tau(&gains, &neg)
            .map_err(|e| Error::Degenerate(format!("distance ({}): {e}", dm.strategy)))?;
        rows.push(FactorTau {
            factor: format!("distance ({})", dm.strategy),
            tau: Some(tau),
            count: records.len(),
        });
    }
    let sizes: Vec<f64> = records
        .iter()
        .map(|r| r.result.source_train_size as f64)
        .collect();
    let tau = match kendall_tau(&gains, &sizes) {
        Ok(t) => Some(t),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    rows.push(FactorTau {
        factor: "source size".into(),
        tau,
        count: records.len(),
    });
    Ok(CorrelationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::AssignmentStrategy;
    use crate::gains::tests::record;

    fn matrix(ids: &[&str], f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
        let n = ids.len();
        DistanceMatrix {
            strategy: AssignmentStrategy::TargetToClosestSource,
            ids: ids.iter().map(|s| s.to_string()).collect(),
            values: (0..n * n).map(|k| f(k / n, k % n)).collect(),
        }
    }

    #[test]
    fn decreasing_gain_with_distance_is_tau_one() {
        let ids = ["t", "s1", "s2", "s3"];
        let dm = matrix(&ids, |_, s| s as f64);
        let recs = vec![
            record("t", "s1", 9.0, true, true),
            record("t", "s2", 4.0, true, true),
            record("t", "s3", -1.0, true, true),
        ];
        let rep = factor_correlations(&recs, &[dm]).unwrap();
        assert_eq!(rep.tau("distance (target-to-source)"), Some(1.0));
        assert_eq!(rep.tau("source size"), None);
    }

    #[test]
    fn constant_distance_is_an_error() {
        let ids = ["t", "s1", "s2"];
        let dm = matrix(&ids, |_, _| 2.0);
        let recs = vec![
            record("t", "s1", 9.0, true, true),
            record("t", "s2", 4.0, true, true),
        ];
        assert!(matches!(
            factor_correlations(&recs, &[dm]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn missing_pair() {
        let dm = matrix(&["t"], |_, _| 0.0);
        let recs = vec![record("t", "s1", 9.0, true, true)];
        assert!(matches!(
            factor_correlations(&recs, &[dm]),
            Err(Error::MissingPair { .. })
        ));
    }

    #[test]
    fn hand_counted_fixture() {
        // gains: 5, 3, 8, 1; distances: 2, 1, 4, 3 (negated: -2, -1, -4, -3).
        // Pairs (gain order vs -distance order):
        // (0,1): g↓ -d↑ D; (0,2): g↑ -d↓ D; (0,3): g↓ -d↓ C;
        // (1,2): g↑ -d↓ D; (1,3): g↓ -d↓ C; (2,3): g↓ -d↑ D.
        // C = 2, D = 4, τ = -2/6.
        let ids = ["t", "a", "b", "c", "d"];
        let dist = [0.0, 2.0, 1.0, 4.0, 3.0];
        let dm = matrix(&ids, |_, s| dist[s]);
        let recs = vec![
            record("t", "a", 5.0, true, true),
            record("t", "b", 3.0, true, true),
            record("t", "c", 8.0, true, true),
            record("t", "d", 1.0, true, true),
        ];
        let rep = factor_correlations(&recs, &[dm]).unwrap();
        assert!((rep.rows[0].tau.unwrap() + 1.0 / 3.0).abs() < 1e-15);
    }
}
