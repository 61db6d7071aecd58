use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::sample_features;
use crate::error::{Error, Result};
use crate::gains::{Regime, Source, TaskRef, TransferResult};
use crate::metrics::MetricValue;
use crate::types::{FeatureSet, TaskType};

use super::model::{Backbone, HeadKind};
use super::synth::ToyDataset;
use super::train::{train_select, TrainConfig};
use super::{mix_seed, tag_of};

/// Training-set caps applied by the sample-limited regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Caps {
    pub small_target: usize,
    pub small_source: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            small_target: 150,
            small_source: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfigs {
    pub pretrain: TrainConfig,
    pub source: TrainConfig,
    pub target: TrainConfig,
}

impl Default for StageConfigs {
    fn default() -> Self {
        let target = TrainConfig {
            steps: 60,
            ..TrainConfig::default()
        };
        StageConfigs {
            pretrain: TrainConfig::default(),
            source: TrainConfig::default(),
            target,
        }
    }
}

/// Everything a transfer chain needs besides its datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub experiment: String,
    pub regime: Regime,
    pub caps: Caps,
    /// Backbone width.
    pub hidden: usize,
    pub stages: StageConfigs,
}

impl ChainSettings {
    fn source_cap(&self) -> usize {
        match self.regime {
            Regime::SmallSourceSmallTarget => self.caps.small_source,
            _ => usize::MAX,
        }
    }

    fn target_cap(&self) -> usize {
        match self.regime {
            Regime::FullTarget => usize::MAX,
            _ => self.caps.small_target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.caps.small_target == 0 || self.caps.small_source == 0 {
            return Err(Error::Config("regime caps must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("backbone width must be positive".into()));
        }
        self.stages.pretrain.validate()?;
        self.stages.source.validate()?;
        self.stages.target.validate()
    }
}

/// One requested chain: source task → target task under one seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChainJob {
    pub source: TaskRef,
    pub target: TaskRef,
    pub seed: u64,
}

impl ChainJob {
    /// Store key; identical settings and job give identical keys.
    pub fn key(&self, settings: &ChainSettings) -> String {
        format!(
            "{}/{}/{}->{}/seed={}",
            settings.experiment, settings.regime, self.source, self.target, self.seed
        )
    }
}

fn stage_cfg(cfg: &TrainConfig, seed: u64, tag: &str) -> TrainConfig {
    cfg.with_seed(mix_seed(seed ^ cfg.seed, tag_of(tag)))
}

/// Pre-trained backbones by seed and source backbones by (source, seed).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackboneCache {
    pub pretrained: BTreeMap<u64, Backbone>,
    pub sources: BTreeMap<(TaskRef, u64), Backbone>,
}

/// Runs transfer chains over a fixed set of datasets, training each
/// pre-trained backbone, source backbone and baseline once and sharing it
/// between the chains that need it.
pub struct ChainRunner<'a> {
    pretrain: &'a ToyDataset,
    datasets: BTreeMap<&'a str, &'a ToyDataset>,
    settings: &'a ChainSettings,
    cache: BackboneCache,
}

impl<'a> ChainRunner<'a> {
    pub fn new(
        pretrain: &'a ToyDataset,
        datasets: &'a [ToyDataset],
        settings: &'a ChainSettings,
    ) -> Result<Self> {
        settings.validate()?;
        let datasets = datasets.iter().map(|d| (d.id.as_str(), d)).collect();
        Ok(ChainRunner {
            pretrain,
            datasets,
            settings,
            cache: BackboneCache::default(),
        })
    }

    /// Uses the given backbones instead of training them again.
    pub fn with_cache(mut self, cache: BackboneCache) -> Self {
        self.cache = cache;
        self
    }

    /// Every backbone the jobs need: cached ones are reused, the rest are
    /// trained.
    pub fn backbones(&self, jobs: &[ChainJob]) -> Result<BackboneCache> {
        let seeds: BTreeSet<u64> = jobs.iter().map(|j| j.seed).collect();
        let pretrained: BTreeMap<u64, Backbone> = seeds
            .par_iter()
            .map(|&s| match self.cache.pretrained.get(&s) {
                Some(b) => Ok((s, b.clone())),
                None => Ok((s, self.pretrained(s)?)),
            })
            .collect::<Result<_>>()?;
        let wanted: BTreeSet<(TaskRef, u64)> =
            jobs.iter().map(|j| (j.source.clone(), j.seed)).collect();
        let sources = wanted
            .into_par_iter()
            .map(|key| {
                let b = match self.cache.sources.get(&key) {
                    Some(b) => b.clone(),
                    None => self.source_backbone(&pretrained[&key.1], &key.0, key.1)?,
                };
                Ok((key, b))
            })
            .collect::<Result<_>>()?;
        Ok(BackboneCache {
            pretrained,
            sources,
        })
    }

    pub fn dataset(&self, id: &str) -> Result<&'a ToyDataset> {
        self.datasets
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownDataset(id.to_string()))
    }

    /// Backbone after generic classification pre-training.
    pub fn pretrained(&self, seed: u64) -> Result<Backbone> {
        let g = self.pretrain.geometry;
        let init = Backbone::init(
            g.patch_dim(),
            self.settings.hidden,
            mix_seed(seed, tag_of("backbone")),
        );
        let cfg = stage_cfg(&self.settings.stages.pretrain, seed, "pretrain");
        train_select(&init, self.pretrain, HeadKind::Classification, &cfg)
            .map(|s| s.model.backbone)
            .map_err(|e| Error::stage("pretrain", e))
    }

    fn source_data(&self, source: &TaskRef) -> Result<ToyDataset> {
        Ok(self
            .dataset(&source.dataset)?
            .capped(self.settings.source_cap()))
    }

    /// Backbone fine-tuned on `source` starting from `pretrained`.
    pub fn source_backbone(
        &self,
        pretrained: &Backbone,
        source: &TaskRef,
        seed: u64,
    ) -> Result<Backbone> {
        let data = self.source_data(source)?;
        let cfg = stage_cfg(
            &self.settings.stages.source,
            seed,
            &format!("source/{source}"),
        );
        train_select(pretrained, &data, HeadKind::for_task(source.task), &cfg)
            .map(|s| s.model.backbone)
            .map_err(|e| Error::stage("source", e))
    }

    /// Target-stage configuration; chain and baseline share it.
    pub fn target_config(&self, target: &TaskRef, seed: u64) -> TrainConfig {
        stage_cfg(
            &self.settings.stages.target,
            seed,
            &format!("target/{target}"),
        )
    }

    /// Target validation metric after fine-tuning from `backbone`.
    pub fn target_metric(
        &self,
        backbone: &Backbone,
        target: &TaskRef,
        seed: u64,
    ) -> Result<MetricValue> {
        let data = self
            .dataset(&target.dataset)?
            .capped(self.settings.target_cap());
        let cfg = self.target_config(target, seed);
        let selected = train_select(backbone, &data, HeadKind::for_task(target.task), &cfg)?;
        Ok(selected
            .score
            .metric()
            .expect("task heads report task metrics"))
    }

    /// Runs every job; results come back in job order.
    pub fn run(&self, jobs: &[ChainJob]) -> Result<Vec<TransferResult>> {
        for j in jobs {
            self.dataset(&j.source.dataset)?;
            self.dataset(&j.target.dataset)?;
        }
        let BackboneCache {
            pretrained,
            sources: source_backbones,
        } = self.backbones(jobs)?;
        let targets: BTreeSet<(TaskRef, u64)> =
            jobs.iter().map(|j| (j.target.clone(), j.seed)).collect();
        let baselines: BTreeMap<(TaskRef, u64), MetricValue> = targets
            .par_iter()
            .map(|(t, s)| {
                let m = self
                    .target_metric(&pretrained[s], t, *s)
                    .map_err(|e| Error::stage("baseline", e))?;
                Ok(((t.clone(), *s), m))
            })
            .collect::<Result<_>>()?;
        jobs.par_iter()
            .map(|j| {
                let backbone = &source_backbones[&(j.source.clone(), j.seed)];
                let metric = self
                    .target_metric(backbone, &j.target, j.seed)
                    .map_err(|e| Error::stage("target", e))?;
                let source = self.dataset(&j.source.dataset)?;
                let target = self.dataset(&j.target.dataset)?;
                Ok(TransferResult {
                    key: j.key(self.settings),
                    source: Source::Task(j.source.clone()),
                    target: j.target.clone(),
                    metric,
                    baseline_metric: baselines[&(j.target.clone(), j.seed)],
                    regime: self.settings.regime,
                    source_domain: source.domain.clone(),
                    target_domain: target.domain.clone(),
                    source_train_size: source.train.len().min(self.settings.source_cap()),
                    seed: j.seed,
                })
            })
            .collect()
    }
}

/// Pre-train → source → target chain plus the pre-train → target baseline,
/// both evaluated on the target validation split.
pub fn run_chain(
    pretrain: &ToyDataset,
    source: (&ToyDataset, TaskType),
    target: (&ToyDataset, TaskType),
    settings: &ChainSettings,
    seed: u64,
) -> Result<TransferResult> {
    let datasets = [source.0.clone(), target.0.clone()];
    let datasets = if source.0.id == target.0.id {
        &datasets[..1]
    } else {
        &datasets[..]
    };
    let runner = ChainRunner::new(pretrain, datasets, settings)?;
    let job = ChainJob {
        source: TaskRef::new(&source.0.id, source.1),
        target: TaskRef::new(&target.0.id, target.1),
        seed,
    };
    Ok(runner.run(std::slice::from_ref(&job))?.remove(0))
}

/// Per-image embeddings: backbone activations averaged over all pixels,
/// subsampled to at most `n` images with [`sample_features`].
pub fn embed_features(
    backbone: &Backbone,
    data: &ToyDataset,
    n: usize,
    seed: u64,
) -> Result<FeatureSet> {
    let mut vectors = Vec::with_capacity(data.train.len() * backbone.hidden_dim());
    for s in &data.train {
        let pooled = backbone
            .activations(&s.patches)?
            .mean_axis(ndarray::Axis(0))
            .ok_or(Error::EmptyFeatureSet)?;
        vectors.extend(pooled.iter().map(|&v| v as f32));
    }
    let all = FeatureSet::new(&data.id, &data.domain, backbone.hidden_dim(), vectors)?;
    sample_features(&all, n, seed)
}
