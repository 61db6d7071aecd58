//! The pipeline behind the command line tool. Every stage reads and writes
//! a single output directory:
//!
//! ```text
//! <out>/data/<dataset>/{train,val}/<index>.{image,labels,depth}.xfrg
//! <out>/data/<dataset>/annotations.json, appearance.xfrf
//! <out>/backbones/<experiment>/<regime>/*.json
//! <out>/results.jsonl
//! <out>/features/<dataset>.xfrf
//! <out>/distances/<strategy>.{json,csv}
//! <out>/analysis/*.csv, analysis.json
//! <out>/report/*.{csv,txt}
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{ChainConfig, Suite};
use crate::distance::{distance_matrix, AssignmentStrategy, DistanceMatrix};
use crate::error::{Error, Result};
use crate::gains::{
    aggregate_all, best_source_per_target, factor_correlations, gain_records, AggregateRow,
    CorrelationReport, GainRecord, Regime, TaskRef,
};
use crate::io::{
    read_json, write_features, write_grid, write_json, AppendSummary, Grid, ResultStore,
};
use crate::report::{
    aggregate_table, best_table, correlation_table, gain_table, records_table, Table,
};
use crate::toy::{
    embed_features, mix_seed, tag_of, train_multisource, Backbone, BackboneCache, ChainRunner,
    Sample, ToyDataset,
};
use crate::types::{BBox, FeatureSet, KeypointInstance, TaskType};

/// Command line overrides applied on top of a loaded configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub regime: Option<Regime>,
    pub emd_cap: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ChainConfig) -> ChainConfig {
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(r) = self.regime {
            cfg.regime = r;
        }
        if let Some(c) = self.emd_cap {
            cfg.distance.emd_cap = c;
        }
        cfg
    }
}

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self, dataset: &str) -> PathBuf {
        self.root.join("data").join(dataset)
    }

    pub fn backbone_dir(&self, cfg: &ChainConfig) -> PathBuf {
        self.root
            .join("backbones")
            .join(&cfg.experiment)
            .join(cfg.regime.as_str())
    }

    pub fn results(&self) -> ResultStore {
        ResultStore::new(self.root.join("results.jsonl"))
    }

    pub fn features_path(&self, dataset: &str) -> PathBuf {
        self.root.join("features").join(format!("{dataset}.xfrf"))
    }

    pub fn distance_path(&self, strategy: AssignmentStrategy) -> PathBuf {
        self.root.join("distances").join(format!("{strategy}.json"))
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

#[derive(Serialize)]
struct Annotation<'a> {
    split: &'static str,
    index: usize,
    component: usize,
    image_class: u16,
    boxes: &'a [BBox],
    keypoints: &'a [KeypointInstance],
}

/// Per-image mean pixel colour, a raw appearance embedding.
fn appearance_features(data: &ToyDataset) -> Result<FeatureSet> {
    let c = data.geometry.channels;
    let mut vectors = Vec::with_capacity(data.train.len() * c);
    for s in &data.train {
        let mean = s
            .image
            .mean_axis(ndarray::Axis(0))
            .and_then(|m| m.mean_axis(ndarray::Axis(0)))
            .ok_or(Error::EmptyFeatureSet)?;
        vectors.extend(mean.iter().map(|&v| v as f32));
    }
    FeatureSet::new(&data.id, &data.domain, c, vectors)
}

fn dump_split<'a>(
    dir: &Path,
    split: &'static str,
    samples: &'a [Arc<Sample>],
) -> Result<Vec<Annotation<'a>>> {
    let dir = dir.join(split);
    fs::create_dir_all(&dir)?;
    let mut notes = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        write_grid(
            &dir.join(format!("{i:05}.image.xfrg")),
            &Grid::from_image(&s.image),
        )?;
        write_grid(
            &dir.join(format!("{i:05}.labels.xfrg")),
            &Grid::from_labels(&s.labels),
        )?;
        write_grid(
            &dir.join(format!("{i:05}.depth.xfrg")),
            &Grid::from_depth(&s.depth),
        )?;
        notes.push(Annotation {
            split,
            index: i,
            component: s.component,
            image_class: s.image_class,
            boxes: &s.boxes,
            keypoints: &s.keypoints,
        });
    }
    Ok(notes)
}

/// Writes one dataset: grids per sample, annotations and appearance
/// features.
pub fn dump_dataset(ws: &Workspace, data: &ToyDataset) -> Result<()> {
    let dir = ws.data_dir(&data.id);
    let mut notes = dump_split(&dir, "train", &data.train)?;
    notes.extend(dump_split(&dir, "val", &data.val)?);
    write_json(&dir.join("annotations.json"), &notes)?;
    write_features(&dir.join("appearance.xfrf"), &appearance_features(data)?)
}

/// Generates and writes the pre-training set and every dataset; returns
/// the number of datasets written.
pub fn gen_data(cfg: &ChainConfig, ws: &Workspace) -> Result<usize> {
    let suite = cfg.build_suite()?;
    dump_dataset(ws, &suite.pretrain)?;
    for d in &suite.datasets {
        dump_dataset(ws, d)?;
    }
    Ok(suite.datasets.len() + 1)
}

#[derive(Serialize, Deserialize)]
struct CachedBackbone {
    fingerprint: u64,
    name: String,
    backbone: Backbone,
}

/// Hash of everything a cached backbone depends on; caches written under a
/// different configuration are ignored.
fn fingerprint(cfg: &ChainConfig) -> Result<u64> {
    let basis = (
        &cfg.settings(),
        &cfg.geometry,
        &cfg.pretrain,
        &cfg.domains,
        &cfg.datasets,
    );
    Ok(tag_of(&serde_json::to_string(&basis)?))
}

fn pretrain_name(seed: u64) -> String {
    format!("pretrain.seed{seed}")
}

fn source_name(source: &TaskRef, seed: u64) -> String {
    format!("{}.{}.seed{seed}", source.dataset, source.task.short())
}

fn load_cached(dir: &Path, name: &str, fp: u64) -> Result<Option<Backbone>> {
    let path = dir.join(format!("{name}.json"));
    if !path.exists() {
        return Ok(None);
    }
    let c: CachedBackbone = read_json(&path)?;
    if c.fingerprint != fp || c.name != name {
        log::warn!("ignoring stale backbone cache {}", path.display());
        return Ok(None);
    }
    Ok(Some(c.backbone))
}

/// Cached backbones for the configured seeds and sources.
pub fn load_backbones(cfg: &ChainConfig, ws: &Workspace) -> Result<BackboneCache> {
    let dir = ws.backbone_dir(cfg);
    let fp = fingerprint(cfg)?;
    let mut cache = BackboneCache::default();
    for job in cfg.jobs() {
        if let std::collections::btree_map::Entry::Vacant(e) = cache.pretrained.entry(job.seed) {
            if let Some(b) = load_cached(&dir, &pretrain_name(job.seed), fp)? {
                e.insert(b);
            }
        }
        let key = (job.source.clone(), job.seed);
        if let std::collections::btree_map::Entry::Vacant(e) = cache.sources.entry(key) {
            if let Some(b) = load_cached(&dir, &source_name(&job.source, job.seed), fp)? {
                e.insert(b);
            }
        }
    }
    Ok(cache)
}

/// Trains (or reuses) every pre-trained and source backbone the
/// configured jobs need and caches them; returns how many were written.
pub fn train_sources(cfg: &ChainConfig, ws: &Workspace) -> Result<usize> {
    let suite = cfg.build_suite()?;
    let settings = cfg.settings();
    let cached = load_backbones(cfg, ws)?;
    let before = cached.pretrained.len() + cached.sources.len();
    let runner = ChainRunner::new(&suite.pretrain, &suite.datasets, &settings)?.with_cache(cached);
    let all = runner.backbones(&cfg.jobs())?;
    let dir = ws.backbone_dir(cfg);
    let fp = fingerprint(cfg)?;
    let save = |name: String, backbone: &Backbone| {
        write_json(
            &dir.join(format!("{name}.json")),
            &CachedBackbone {
                fingerprint: fp,
                name,
                backbone: backbone.clone(),
            },
        )
    };
    for (&seed, b) in &all.pretrained {
        save(pretrain_name(seed), b)?;
    }
    for ((src, seed), b) in &all.sources {
        save(source_name(src, *seed), b)?;
    }
    Ok(all.pretrained.len() + all.sources.len() - before)
}

/// Runs the configured chains whose keys are not stored yet and appends
/// their results.
pub fn run_chains(cfg: &ChainConfig, ws: &Workspace) -> Result<AppendSummary> {
    let settings = cfg.settings();
    let store = ws.results();
    let done = store.keys()?;
    let all = cfg.jobs();
    let pending: Vec<_> = all
        .iter()
        .filter(|j| !done.contains(&j.key(&settings)))
        .cloned()
        .collect();
    if pending.is_empty() {
        return Ok(AppendSummary {
            written: 0,
            skipped: all.len(),
        });
    }
    let suite = cfg.build_suite()?;
    let runner = ChainRunner::new(&suite.pretrain, &suite.datasets, &settings)?
        .with_cache(load_backbones(cfg, ws)?);
    let results = runner.run(&pending)?;
    let mut summary = store.append(&results)?;
    summary.skipped += all.len() - pending.len();
    Ok(summary)
}

/// Middle learning-rate candidate, the fixed rate of the multi-source
/// embedding model.
fn median_lr(candidates: &[f64]) -> f64 {
    let mut lrs = candidates.to_vec();
    lrs.sort_by(f64::total_cmp);
    lrs[lrs.len() / 2]
}

/// Embeds every dataset of `suite` with a multi-source backbone trained
/// on all of them, starting from `pretrained`.
pub fn embed_suite(
    cfg: &ChainConfig,
    suite: &Suite,
    pretrained: &Backbone,
    seed: u64,
) -> Result<Vec<FeatureSet>> {
    let task = cfg
        .tasks
        .sources
        .first()
        .copied()
        .unwrap_or(TaskType::SemanticSegmentation);
    let pairs: Vec<(&ToyDataset, TaskType)> = suite.datasets.iter().map(|d| (d, task)).collect();
    let stage = cfg
        .stages
        .source
        .with_seed(mix_seed(seed, tag_of("embedding")));
    let lr = median_lr(&stage.lr_candidates);
    let ms = train_multisource(pretrained, &pairs, &stage, lr)
        .map_err(|e| Error::stage("embedding", e))?;
    suite
        .datasets
        .iter()
        .map(|d| embed_features(&ms.backbone, d, d.train.len(), cfg.distance.sample_seed))
        .collect()
}

/// One distance table per strategy. The one-to-one strategy samples at
/// most `emd_cap` images per dataset.
pub fn distance_tables(
    cfg: &ChainConfig,
    features: &[FeatureSet],
    strategies: &[AssignmentStrategy],
) -> Result<Vec<DistanceMatrix>> {
    strategies
        .iter()
        .map(|&strategy| {
            let n = match strategy {
                AssignmentStrategy::EmdOneToOne => {
                    cfg.distance.sample_size.min(cfg.distance.emd_cap)
                }
                _ => cfg.distance.sample_size,
            };
            distance_matrix(features, strategy, n, cfg.distance.sample_seed)
        })
        .collect()
}

/// Embeds the configured datasets from the (cached or freshly trained)
/// pre-trained weights of `seed`.
pub fn embed_all(cfg: &ChainConfig, ws: &Workspace, seed: u64) -> Result<Vec<FeatureSet>> {
    let suite = cfg.build_suite()?;
    let settings = cfg.settings();
    let pretrained = match load_backbones(cfg, ws)?.pretrained.remove(&seed) {
        Some(b) => b,
        None => ChainRunner::new(&suite.pretrain, &suite.datasets, &settings)?.pretrained(seed)?,
    };
    embed_suite(cfg, &suite, &pretrained, seed)
}

fn matrix_csv(dm: &DistanceMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["target \\ source".to_string()];
    header.extend(dm.ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in dm.ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..dm.len()).map(|j| dm.at(i, j).to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Embeds the datasets and writes their feature files and one distance
/// table per strategy.
pub fn compute_distances(
    cfg: &ChainConfig,
    ws: &Workspace,
    strategies: &[AssignmentStrategy],
) -> Result<Vec<DistanceMatrix>> {
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let features = embed_all(cfg, ws, seed)?;
    for f in &features {
        let path = ws.features_path(&f.dataset_id);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_features(&path, f)?;
    }
    let tables = distance_tables(cfg, &features, strategies)?;
    for dm in &tables {
        let path = ws.distance_path(dm.strategy);
        write_json(&path, dm)?;
        fs::write(path.with_extension("csv"), matrix_csv(dm)?)?;
    }
    Ok(tables)
}

/// Distance tables written by [`compute_distances`], in strategy order.
pub fn load_distances(ws: &Workspace) -> Result<Vec<DistanceMatrix>> {
    AssignmentStrategy::ALL
        .iter()
        .map(|&s| ws.distance_path(s))
        .filter(|p| p.exists())
        .map(|p| read_json(&p))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub records: Vec<GainRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub best: Vec<GainRecord>,
    pub correlations: CorrelationReport,
}

impl Analysis {
    pub fn from_records(records: Vec<GainRecord>, distances: &[DistanceMatrix]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        Ok(Analysis {
            aggregates: aggregate_all(&records),
            best: best_source_per_target(&records),
            correlations: factor_correlations(&records, distances)?,
            records,
        })
    }

    pub fn tables(&self) -> Vec<(&'static str, Table)> {
        vec![
            ("gains", gain_table(&self.records)),
            ("levels", aggregate_table(&self.aggregates)),
            ("best", best_table(&self.best)),
            ("correlations", correlation_table(&self.correlations)),
            ("records", records_table(&self.records)),
        ]
    }
}

/// Gain records, level shares, best sources and correlations computed from
/// the store and any distance tables present.
pub fn analyze(ws: &Workspace) -> Result<Analysis> {
    let records = gain_records(&ws.results().load()?)?;
    let analysis = Analysis::from_records(records, &load_distances(ws)?)?;
    let dir = ws.analysis_dir();
    fs::create_dir_all(&dir)?;
    for (name, table) in analysis.tables() {
        fs::write(dir.join(format!("{name}.csv")), table.to_csv()?)?;
    }
    write_json(&dir.join("analysis.json"), &analysis)?;
    Ok(analysis)
}

/// Renders every table as CSV and text under the report directory and
/// returns the text of the summary tables.
pub fn report(ws: &Workspace, ansi: bool) -> Result<String> {
    let records = gain_records(&ws.results().load()?)?;
    let analysis = Analysis::from_records(records, &load_distances(ws)?)?;
    let dir = ws.report_dir();
    fs::create_dir_all(&dir)?;
    let mut text = String::new();
    for (name, table) in analysis.tables() {
        fs::write(dir.join(format!("{name}.csv")), table.to_csv()?)?;
        fs::write(dir.join(format!("{name}.txt")), table.to_text(false))?;
        if name != "records" {
            text.push_str(&table.to_text(ansi));
            text.push('\n');
        }
    }
    Ok(text)
}
