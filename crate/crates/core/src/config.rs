//! Experiment configuration: a TOML file naming the synthetic domains and
//! datasets, the transfer regime, seeds and per-stage training settings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{DEFAULT_EMD_CAP, DEFAULT_SAMPLE_SIZE};
use crate::error::{Error, Result};
use crate::gains::{Regime, TaskRef};
use crate::toy::{
    generate_dataset, Appearance, Caps, ChainJob, ChainSettings, Geometry, LrSchedule,
    StageConfigs, SynthDomainSpec, ToyDataset, TrainConfig,
};
use crate::types::TaskType;

/// An appearance domain: either drawn from `seed`, or the union of other
/// domains listed in `mixture`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_breadth")]
    pub breadth: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mixture: Vec<String>,
}

fn default_breadth() -> f64 {
    0.2
}

fn default_noise() -> f64 {
    0.3
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub id: String,
    pub domain: String,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Apply non-maximum suppression to this dataset's detections.
    #[serde(default = "default_true")]
    pub nms: bool,
}

/// The generic pre-training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub domain: String,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLists {
    pub sources: Vec<TaskType>,
    pub targets: Vec<TaskType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceConfig {
    /// Images sampled per dataset.
    pub sample_size: usize,
    pub sample_seed: u64,
    /// Sample cap for the optimal one-to-one strategy.
    pub emd_cap: usize,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig {
            sample_size: DEFAULT_SAMPLE_SIZE,
            sample_seed: 0,
            emd_cap: DEFAULT_EMD_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub experiment: String,
    pub regime: Regime,
    pub seeds: Vec<u64>,
    /// Backbone width.
    pub hidden: usize,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub geometry: Geometry,
    pub tasks: TaskLists,
    #[serde(default)]
    pub stages: StageConfigs,
    #[serde(default)]
    pub distance: DistanceConfig,
    pub pretrain: PretrainConfig,
    pub domains: Vec<DomainConfig>,
    pub datasets: Vec<DatasetConfig>,
}

/// Generated datasets of a configuration.
#[derive(Debug, Clone)]
pub struct Suite {
    pub pretrain: ToyDataset,
    pub datasets: Vec<ToyDataset>,
}

impl Suite {
    pub fn get(&self, id: &str) -> Result<&ToyDataset> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::UnknownDataset(id.to_string()))
    }
}

impl ChainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ChainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn settings(&self) -> ChainSettings {
        ChainSettings {
            experiment: self.experiment.clone(),
            regime: self.regime,
            caps: self.caps,
            hidden: self.hidden,
            stages: self.stages.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        self.geometry.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.tasks.sources.is_empty() || self.tasks.targets.is_empty() {
            return Err(Error::Config(
                "source and target task lists must be non-empty".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        for d in &self.domains {
            if !ids.insert(d.id.as_str()) {
                return Err(Error::Config(format!("domain {:?} declared twice", d.id)));
            }
            if d.seed.is_some() == !d.mixture.is_empty() {
                return Err(Error::Config(format!(
                    "domain {:?} needs exactly one of `seed` or `mixture`",
                    d.id
                )));
            }
        }
        for d in &self.domains {
            self.components(&d.id)?;
        }
        self.components(&self.pretrain.domain)?;
        let mut ds = BTreeSet::new();
        for d in &self.datasets {
            if !ds.insert(d.id.as_str()) {
                return Err(Error::Config(format!("dataset {:?} declared twice", d.id)));
            }
            if !ids.contains(d.domain.as_str()) {
                return Err(Error::UnknownDomain(d.domain.clone()));
            }
            if d.n_train == 0 || d.n_val == 0 {
                return Err(Error::Config(format!(
                    "dataset {:?} needs train and val samples",
                    d.id
                )));
            }
        }
        Ok(())
    }

    fn domain(&self, id: &str) -> Result<&DomainConfig> {
        self.domains
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::UnknownDomain(id.to_string()))
    }

    /// Appearance components of a domain, with mixtures expanded.
    pub fn components(&self, domain: &str) -> Result<Vec<Appearance>> {
        fn walk<'a>(
            cfg: &'a ChainConfig,
            id: &'a str,
            stack: &mut Vec<&'a str>,
            out: &mut BTreeMap<u64, Appearance>,
        ) -> Result<()> {
            if stack.contains(&id) {
                return Err(Error::Config(format!(
                    "domain mixture cycle through {id:?}"
                )));
            }
            let d = cfg.domain(id)?;
            match d.seed {
                Some(seed) => {
                    out.entry(seed).or_insert_with(|| {
                        Appearance::from_seed(seed, &cfg.geometry, d.breadth, d.noise)
                    });
                }
                None => {
                    stack.push(id);
                    for m in &d.mixture {
                        walk(cfg, m, stack, out)?;
                    }
                    stack.pop();
                }
            }
            Ok(())
        }
        let mut out = BTreeMap::new();
        walk(self, domain, &mut Vec::new(), &mut out)?;
        Ok(out.into_values().collect())
    }

    pub fn domain_spec(&self, domain: &str, seed: u64) -> Result<SynthDomainSpec> {
        Ok(SynthDomainSpec {
            domain_id: domain.to_string(),
            components: self.components(domain)?,
            geometry: self.geometry,
            seed,
        })
    }

    pub fn dataset_config(&self, id: &str) -> Result<&DatasetConfig> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::UnknownDataset(id.to_string()))
    }

    pub fn generate(&self, d: &DatasetConfig) -> Result<ToyDataset> {
        let mut ds = generate_dataset(
            &d.id,
            &self.domain_spec(&d.domain, d.seed)?,
            d.n_train,
            d.n_val,
        )?;
        ds.nms = d.nms;
        Ok(ds)
    }

    pub fn generate_pretrain(&self) -> Result<ToyDataset> {
        let p = &self.pretrain;
        generate_dataset(
            "pretrain",
            &self.domain_spec(&p.domain, p.seed)?,
            p.n_train,
            p.n_val,
        )
    }

    /// Generates the pre-training set and every declared dataset.
    pub fn build_suite(&self) -> Result<Suite> {
        let datasets = self
            .datasets
            .par_iter()
            .map(|d| self.generate(d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Suite {
            pretrain: self.generate_pretrain()?,
            datasets,
        })
    }

    /// Every (source, target, seed) combination of the configured tasks,
    /// skipping a task transferred onto itself.
    pub fn jobs(&self) -> Vec<ChainJob> {
        let mut jobs = Vec::new();
        for &seed in &self.seeds {
            for t in &self.datasets {
                for &tt in &self.tasks.targets {
                    for s in &self.datasets {
                        for &st in &self.tasks.sources {
                            let source = TaskRef::new(&s.id, st);
                            let target = TaskRef::new(&t.id, tt);
                            if source != target {
                                jobs.push(ChainJob {
                                    source,
                                    target,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        jobs
    }
}

impl Default for ChainConfig {
    fn default() -> Self {
        default_toy_suite()
    }
}

fn seeded(id: &str, seed: u64) -> DomainConfig {
    DomainConfig {
        id: id.into(),
        seed: Some(seed),
        breadth: default_breadth(),
        noise: default_noise(),
        mixture: Vec::new(),
    }
}

fn mixture(id: &str, parts: &[&str]) -> DomainConfig {
    DomainConfig {
        id: id.into(),
        seed: None,
        breadth: default_breadth(),
        noise: default_noise(),
        mixture: parts.iter().map(|s| s.to_string()).collect(),
    }
}

/// The fixture suite: two narrow domains, a broad domain that mixes them,
/// a disjoint domain, two datasets per domain, and segmentation chains.
pub fn default_toy_suite() -> ChainConfig {
    let stage = |steps: usize| TrainConfig {
        steps,
        batch_size: 8,
        schedule: LrSchedule::StepDecay {
            every: steps.div_ceil(2).max(1),
            factor: 0.3,
        },
        lr_candidates: vec![0.03, 0.1, 0.3],
        ..TrainConfig::default()
    };
    let datasets = ["alpha", "beta", "broad", "delta"]
        .iter()
        .enumerate()
        .flat_map(|(i, dom)| {
            ["a", "b"]
                .iter()
                .enumerate()
                .map(move |(j, suffix)| DatasetConfig {
                    id: format!("{dom}-{suffix}"),
                    domain: dom.to_string(),
                    n_train: 120,
                    n_val: 40,
                    seed: 1000 + 10 * i as u64 + j as u64,
                    nms: true,
                })
        })
        .collect();
    ChainConfig {
        experiment: "toy-suite".into(),
        regime: Regime::SmallTarget,
        seeds: (0..5).collect(),
        hidden: 8,
        caps: Caps {
            small_target: 16,
            small_source: 12,
        },
        geometry: Geometry::default(),
        tasks: TaskLists {
            sources: vec![TaskType::SemanticSegmentation],
            targets: vec![TaskType::SemanticSegmentation],
        },
        stages: StageConfigs {
            pretrain: stage(200),
            source: stage(200),
            target: stage(20),
        },
        distance: DistanceConfig::default(),
        pretrain: PretrainConfig {
            domain: "generic".into(),
            n_train: 200,
            n_val: 40,
            seed: 7,
        },
        domains: vec![
            seeded("alpha", 11),
            seeded("beta", 22),
            seeded("delta", 33),
            mixture("broad", &["alpha", "beta"]),
            mixture("generic", &["alpha", "beta", "delta"]),
        ],
        datasets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = default_toy_suite();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ChainConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn mixture_contains_its_parts() {
        let cfg = default_toy_suite();
        let broad = cfg.components("broad").unwrap();
        for part in ["alpha", "beta"] {
            let c = cfg.components(part).unwrap();
            assert!(broad.contains(&c[0]));
        }
        assert!(!broad.contains(&cfg.components("delta").unwrap()[0]));
    }

    #[test]
    fn validation_errors() {
        let mut cfg = default_toy_suite();
        cfg.datasets[0].domain = "nowhere".into();
        assert!(matches!(cfg.validate(), Err(Error::UnknownDomain(_))));

        let mut cfg = default_toy_suite();
        cfg.caps.small_target = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = default_toy_suite();
        cfg.domains.push(mixture("loop", &["loop"]));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn job_grid_skips_self_transfer() {
        let cfg = default_toy_suite();
        let jobs = cfg.jobs();
        assert_eq!(jobs.len(), 5 * 8 * 7);
        assert!(jobs.iter().all(|j| j.source != j.target));
    }
}
