//! Relative transfer gains, their significance levels, and the aggregations
//! and rank correlations built on top of them.

mod correlation;
mod kendall;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricValue;
use crate::types::{Direction, TaskType};

pub use correlation::{factor_correlations, CorrelationReport, FactorTau};
pub use kendall::kendall_tau;

/// A (dataset, task type) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskRef {
    pub dataset: String,
    pub task: TaskType,
}

impl TaskRef {
    pub fn new(dataset: impl Into<String>, task: TaskType) -> Self {
        TaskRef {
            dataset: dataset.into(),
            task,
        }
    }
}

impl fmt::Display for TaskRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.dataset, self.task.short())
    }
}

/// Where the target model's backbone came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// Generic pre-training only.
    Baseline,
    Task(TaskRef),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Baseline => f.write_str("BASELINE"),
            Source::Task(t) => t.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SmallTarget,
    FullTarget,
    SmallSourceSmallTarget,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SmallTarget => "small-target",
            Regime::FullTarget => "full-target",
            Regime::SmallSourceSmallTarget => "small-source-small-target",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Regime::SmallTarget,
            Regime::FullTarget,
            Regime::SmallSourceSmallTarget,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| Error::InvalidInput(format!("unknown regime {s:?}")))
    }
}

/// Outcome of one transfer experiment: the chained model's target metric
/// and the metric of the pre-train-only baseline on the same target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    /// Unique experiment key; used to de-duplicate store appends.
    pub key: String,
    pub source: Source,
    pub target: TaskRef,
    pub metric: MetricValue,
    pub baseline_metric: MetricValue,
    pub regime: Regime,
    pub source_domain: String,
    pub target_domain: String,
    pub source_train_size: usize,
    pub seed: u64,
}

/// Percentage improvement of `m` over `baseline`, sign-flipped for
/// lower-better metrics so that positive always means better.
pub fn relative_gain(m: &MetricValue, baseline: &MetricValue) -> Result<f64> {
    if m.task_type != baseline.task_type || m.direction != baseline.direction {
        return Err(Error::MetricMismatch(format!(
            "{} ({:?}) vs baseline {} ({:?})",
            m.task_type, m.direction, baseline.task_type, baseline.direction
        )));
    }
    if baseline.value == 0.0 {
        return Err(Error::UndefinedGain);
    }
    let r = (m.value / baseline.value - 1.0) * 100.0;
    Ok(match m.direction {
        Direction::HigherBetter => r,
        Direction::LowerBetter => -r,
    })
}

/// Significance band of a relative gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    /// r > 10
    #[serde(rename = "VP")]
    VeryPositive,
    /// 2 < r ≤ 10
    #[serde(rename = "P")]
    Positive,
    /// −2 ≤ r ≤ 2
    #[serde(rename = "I")]
    Insignificant,
    /// r < −2
    #[serde(rename = "N")]
    Negative,
}

impl Level {
    pub fn tag(self) -> &'static str {
        match self {
            Level::VeryPositive => "VP",
            Level::Positive => "P",
            Level::Insignificant => "I",
            Level::Negative => "N",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

pub fn classify_level(r: f64) -> Level {
    if r > 10.0 {
        Level::VeryPositive
    } else if r > 2.0 {
        Level::Positive
    } else if r < -2.0 {
        Level::Negative
    } else {
        Level::Insignificant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub result: TransferResult,
    pub gain: f64,
    pub level: Level,
    pub within_domain: bool,
    pub within_task_type: bool,
}

impl GainRecord {
    /// Fails for baseline-sourced results, which carry no transfer.
    pub fn from_result(result: TransferResult) -> Result<Self> {
        let Source::Task(src) = &result.source else {
            return Err(Error::InvalidInput(format!(
                "{}: baseline result has no transfer gain",
                result.key
            )));
        };
        let gain = relative_gain(&result.metric, &result.baseline_metric)?;
        let within_task_type = src.task == result.target.task;
        let within_domain = result.source_domain == result.target_domain;
        Ok(GainRecord {
            level: classify_level(gain),
            gain,
            within_domain,
            within_task_type,
            result,
        })
    }

    pub fn source(&self) -> Option<&TaskRef> {
        match &self.result.source {
            Source::Task(t) => Some(t),
            Source::Baseline => None,
        }
    }
}

/// Gain records for every non-baseline result.
pub fn gain_records(results: &[TransferResult]) -> Result<Vec<GainRecord>> {
    results
        .iter()
        .filter(|r| r.source != Source::Baseline)
        .map(|r| GainRecord::from_result(r.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    All,
    Within,
    Cross,
}

impl Filter {
    pub const ALL: [Filter; 3] = [Filter::All, Filter::Within, Filter::Cross];

    fn admits(self, within: bool) -> bool {
        match self {
            Filter::All => true,
            Filter::Within => within,
            Filter::Cross => !within,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Filter::All => "all",
            Filter::Within => "within",
            Filter::Cross => "cross",
        }
    }
}

/// Percentages of experiments per level under a domain/task filter. `P`
/// counts every r > 2 and therefore includes the `VP` experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub domain: Filter,
    pub task: Filter,
    pub pct_p: f64,
    pub pct_vp: f64,
    pub pct_n: f64,
    pub count: usize,
}

pub fn aggregate_levels(
    records: &[GainRecord],
    domain: Filter,
    task: Filter,
) -> Result<AggregateRow> {
    let selected: Vec<f64> = records
        .iter()
        .filter(|r| domain.admits(r.within_domain) && task.admits(r.within_task_type))
        .map(|r| r.gain)
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyFilter(format!(
            "domain={}, task={}",
            domain.as_str(),
            task.as_str()
        )));
    }
    let n = selected.len() as f64;
    let pct = |pred: &dyn Fn(f64) -> bool| {
        100.0 * selected.iter().filter(|&&r| pred(r)).count() as f64 / n
    };
    Ok(AggregateRow {
        domain,
        task,
        pct_p: pct(&|r| r > 2.0),
        pct_vp: pct(&|r| r > 10.0),
        pct_n: pct(&|r| r < -2.0),
        count: selected.len(),
    })
}

/// Every non-empty combination of domain and task filters.
pub fn aggregate_all(records: &[GainRecord]) -> Vec<AggregateRow> {
    Filter::ALL
        .into_iter()
        .flat_map(|d| Filter::ALL.into_iter().map(move |t| (d, t)))
        .filter_map(|(d, t)| aggregate_levels(records, d, t).ok())
        .collect()
}

/// Per target task, the record with the highest gain (first wins on ties).
/// Targets appear in order of first occurrence.
pub fn best_source_per_target(records: &[GainRecord]) -> Vec<GainRecord> {
    let mut best: Vec<&GainRecord> = Vec::new();
    for r in records {
        match best.iter_mut().find(|b| b.result.target == r.result.target) {
            Some(b) if r.gain > b.gain => *b = r,
            Some(_) => {}
            None => best.push(r),
        }
    }
    best.into_iter().cloned().collect()
}
