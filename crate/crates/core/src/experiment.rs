//! Config-driven pipeline behind the `rim` commands: data preparation,
//! indexing, retrieval, training, evaluation and ablation runs.
//!
//! Every artifact lands in `<output_dir>/<config hash>/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::{Provenance, RetrievalCache};
use crate::codec::fingerprint;
use crate::dataset::{
    load_table, load_table_like, load_table_with_schema, split_by_time, split_kfold, split_random, FieldKind,
    FoldAssignment, LabelBinning, NumericBinning, Schema, Slot, Table,
};
use crate::error::{Result, RimError};
use crate::index::{build_index, detect_stop_fields, DEFAULT_STOP_RATIO};
use crate::metrics::{auc, log_loss, ranking_summary, rmse, PredictionRecord, RankedList};
use crate::model::{fit, predict, EpochLog, InteractionKind, ModelParams, ModelShape, TaskKind, TrainConfig, Trainer};
use crate::retrieval::{make_query, RankingParams, RetrievalMode, RetrievedSet, Retriever};
use crate::source::{gather, CacheSource, KFoldSource, NeighborSource, NoRetrieval, PoolSource};
use crate::synth::{neighbor_signal, NeighborSignalSpec};

/// Brute-force cross-checks are limited to pools of this size.
pub const ORACLE_MAX_POOL: usize = 2000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file; the header carries the schema unless `schema` is given.
    pub path: Option<PathBuf>,
    /// JSON schema sidecar.
    pub schema: Option<PathBuf>,
    /// Generate the neighbor-signal table instead of reading a file.
    pub synthetic: Option<NeighborSignalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitConfig {
    /// Pool `ts < t1`, train `t1 <= ts < t2`, test `ts >= t2`.
    Time { t1: i64, t2: i64 },
    /// Random holdout test set; training rows retrieve from the other folds.
    Kfold { k: usize, test_fraction: f64 },
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::Time {
            t1: NeighborSignalSpec::T1,
            t2: NeighborSignalSpec::T2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum RetrievalConfig {
    Bm25,
    /// Uniform random neighbors seeded from the experiment seed.
    Random,
    /// BM25 restricted to rows sharing the target's value in `field`.
    Filtered {
        field: String,
    },
    /// Precomputed results written by `retrieve`.
    Cached {
        path: PathBuf,
    },
    None,
}

impl RetrievalConfig {
    pub fn label(&self) -> String {
        match self {
            RetrievalConfig::Bm25 => "bm25".into(),
            RetrievalConfig::Random => "random".into(),
            RetrievalConfig::Filtered { field } => format!("filtered({field})"),
            RetrievalConfig::Cached { .. } => "cached".into(),
            RetrievalConfig::None => "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub modes: Vec<RetrievalConfig>,
    pub labels: Vec<bool>,
    pub interactions: Vec<InteractionKind>,
    /// Retrieval sizes to sweep; empty means just `train.k`.
    pub k_list: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            modes: vec![RetrievalConfig::Bm25, RetrievalConfig::Random, RetrievalConfig::None],
            labels: vec![true, false],
            interactions: vec![InteractionKind::Inner, InteractionKind::Kernel, InteractionKind::Micro],
            k_list: Vec::new(),
        }
    }
}

/// Top-n evaluation: each positive test row is ranked against copies of
/// itself with the item field replaced by sampled negative items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingEvalConfig {
    pub item_field: String,
    pub negatives: usize,
    pub k: usize,
}

impl Default for RankingEvalConfig {
    fn default() -> Self {
        RankingEvalConfig {
            item_field: "item".into(),
            negatives: 100,
            k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    /// Drives every random choice: splits, initialization, shuffling, random retrieval.
    pub seed: u64,
    pub stop_ratio: f64,
    pub ranking: RankingParams,
    /// `train.seed` is overwritten by `seed`.
    pub train: TrainConfig,
    pub task: TaskKind,
    pub label_classes: u32,
    pub retrieval: RetrievalConfig,
    pub ablation: AblationConfig,
    pub ranking_eval: Option<RankingEvalConfig>,
    /// Excluded from the config hash.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            split: SplitConfig::default(),
            seed: 0,
            stop_ratio: DEFAULT_STOP_RATIO,
            ranking: RankingParams::default(),
            train: TrainConfig::default(),
            task: TaskKind::Binary,
            label_classes: 2,
            retrieval: RetrievalConfig::Bm25,
            ablation: AblationConfig::default(),
            ranking_eval: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Sets `path` (dot-separated) in a JSON document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| RimError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(RimError::Config(format!("bad override key `{path}`")));
    }
    let mut cur = doc;
    for key in &keys[..keys.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        cur = cur
            .as_object_mut()
            .expect("object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match cur {
        Value::Object(map) => {
            map.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        _ => Err(RimError::Config(format!(
            "override `{path}` descends into a non-object"
        ))),
    }
}

impl ExperimentConfig {
    /// Parses a JSON document after applying `--set` overrides.
    pub fn from_value(mut doc: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| RimError::Config(format!("invalid config: {e}")))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RimError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let doc: Value =
            serde_json::from_str(&text).map_err(|e| RimError::Config(format!("config is not JSON: {e}")))?;
        let mut cfg = Self::from_value(doc, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.data.path {
            fix(p);
        }
        if let Some(p) = &mut self.data.schema {
            fix(p);
        }
        if let RetrievalConfig::Cached { path } = &mut self.retrieval {
            fix(path);
        }
        for m in &mut self.ablation.modes {
            if let RetrievalConfig::Cached { path } = m {
                fix(path);
            }
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RimError::Config(m));
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("data needs exactly one of `path` or `synthetic`".into()),
        }
        if self.data.schema.is_some() && self.data.path.is_none() {
            return bad("`data.schema` requires `data.path`".into());
        }
        match self.split {
            SplitConfig::Time { t1, t2 } if t1 >= t2 => return bad(format!("split needs t1 < t2, got {t1}, {t2}")),
            SplitConfig::Kfold { k, test_fraction } => {
                if k < 2 {
                    return bad(format!("k-fold split needs k >= 2, got {k}"));
                }
                if !(0.0..1.0).contains(&test_fraction) {
                    return bad(format!("test_fraction {test_fraction} not in [0, 1)"));
                }
            }
            _ => {}
        }
        if !(self.stop_ratio > 0.0 && self.stop_ratio <= 1.0) {
            return bad(format!("stop_ratio {} not in (0, 1]", self.stop_ratio));
        }
        if self.label_classes < 2 {
            return bad("label_classes must be at least 2".into());
        }
        self.ranking.validate()?;
        self.train.validate()?;
        let cached = |m: &RetrievalConfig| matches!(m, RetrievalConfig::Cached { .. });
        if matches!(self.split, SplitConfig::Kfold { .. })
            && (cached(&self.retrieval) || self.ablation.modes.iter().any(cached))
        {
            return bad("cached retrieval is only available with the time split".into());
        }
        if let Some(r) = &self.ranking_eval {
            if r.negatives == 0 || r.k == 0 {
                return bad("ranking_eval needs negatives > 0 and k > 0".into());
            }
            if self.task != TaskKind::Binary {
                return bad("ranking_eval needs the binary task".into());
            }
        }
        Ok(())
    }

    /// Canonical JSON of everything that affects results.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output_dir");
        serde_json::to_string(&v).expect("json")
    }

    /// 16 hex digits; names the run directory.
    pub fn hash(&self) -> String {
        format!("{:016x}", fingerprint(self.canonical_json().as_bytes()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Reproducibility {
    pub seed: u64,
    pub config_hash: String,
    pub index_fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub n: usize,
    pub f: usize,
    pub v: usize,
    pub n_pool: usize,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexStats {
    pub num_docs: u64,
    pub num_fields: usize,
    pub vocab: usize,
    pub indexed_features: usize,
    pub total_postings: usize,
    pub stop_fields: Vec<String>,
    /// Bucket `i` counts postings with length in `[2^i, 2^(i+1))`.
    pub posting_length_histogram: Vec<usize>,
    pub fingerprint: String,
    pub build_seconds: f64,
    pub path: PathBuf,
}

/// Data loaded, discretized, split and indexed.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub run_dir: PathBuf,
    pub full: Table,
    pub train: Table,
    pub test: Table,
    /// Time split only.
    pub pool: Option<Table>,
    /// k-fold split only.
    pub folds: Option<FoldAssignment>,
    pub stop_fields: BTreeSet<usize>,
    /// The pool index (time split) or the full-train index (k-fold).
    pub retriever: Retriever,
    pub index_build_seconds: f64,
}

fn load_data(cfg: &DataConfig, seed: u64) -> Result<Table> {
    if let Some(spec) = &cfg.synthetic {
        let mut spec = spec.clone();
        spec.seed ^= seed;
        return neighbor_signal(&spec);
    }
    let path = cfg.path.as_ref().expect("validated");
    match &cfg.schema {
        Some(schema) => load_table_with_schema(path, &Schema::load_json(schema)?),
        None => load_table(path),
    }
}

/// Row positions of each part, in table order.
struct Parts {
    pool: Option<Vec<usize>>,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn split_rows(table: &Table, split: &SplitConfig, seed: u64) -> Result<Parts> {
    // split on a copy whose ids are row positions, then read the rows back
    let indexed = table.with_samples(
        table
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut s = s.clone();
                s.id = i as u64;
                s
            })
            .collect(),
    );
    let rows = |t: &Table| t.samples().iter().map(|s| s.id as usize).collect::<Vec<_>>();
    Ok(match *split {
        SplitConfig::Time { t1, t2 } => {
            let (pool, train, test) = split_by_time(&indexed, t1, t2)?;
            Parts {
                pool: Some(rows(&pool)),
                train: rows(&train),
                test: rows(&test),
            }
        }
        SplitConfig::Kfold { test_fraction, .. } => {
            let (train, test) = split_random(&indexed, test_fraction, seed)?;
            Parts {
                pool: None,
                train: rows(&train),
                test: rows(&test),
            }
        }
    })
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let run_dir = config.output_dir.join(&hash);
        let mut full = load_data(&config.data, config.seed)?;
        if full.is_empty() {
            return Err(RimError::Data("dataset has no rows".into()));
        }
        let parts = split_rows(&full, &config.split, config.seed)?;

        // binning is fitted on everything except the test rows
        let fit_rows: Vec<usize> = {
            let mut r: Vec<usize> = parts.pool.iter().flatten().chain(&parts.train).copied().collect();
            r.sort_unstable();
            r
        };
        let fit_on = full.select(&fit_rows);
        for f in 0..full.num_features() {
            if let FieldKind::Numeric { bins } = full.schema().feature(f).kind {
                let values: Vec<f64> = fit_on
                    .samples()
                    .iter()
                    .filter_map(|s| match s.slots[f] {
                        Slot::Raw(v) => v,
                        _ => None,
                    })
                    .collect();
                if values.is_empty() {
                    return Err(RimError::Data(format!(
                        "numeric field `{}` has no training values",
                        full.schema().feature(f).name
                    )));
                }
                full.apply_numeric_binning(f, &NumericBinning::fit(&values, bins))?;
            }
        }
        let labels = LabelBinning::fit(fit_on.samples().iter().map(|s| s.label), config.label_classes)?;
        full.apply_label_binning(labels);

        let train = full.select(&parts.train);
        let test = full.select(&parts.test);
        if train.is_empty() {
            return Err(RimError::Data("split left no training rows".into()));
        }
        let pool = parts.pool.as_ref().map(|rows| full.select(rows));
        let folds = match config.split {
            SplitConfig::Kfold { k, .. } => Some(split_kfold(&train, k, config.seed)?),
            SplitConfig::Time { .. } => None,
        };
        let index_table = pool.as_ref().unwrap_or(&train);
        let stop_fields = detect_stop_fields(index_table, config.stop_ratio);
        let start = Instant::now();
        let index = build_index(index_table, &stop_fields)?;
        let index_build_seconds = start.elapsed().as_secs_f64();
        let retriever = Retriever::new(index, index_table.clone(), config.ranking)?;
        Ok(Experiment {
            config,
            hash,
            run_dir,
            full,
            train,
            test,
            pool,
            folds,
            stop_fields,
            retriever,
            index_build_seconds,
        })
    }

    pub fn ensure_run_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.run_dir).map_err(|e| RimError::io(&self.run_dir, e))?;
        Ok(&self.run_dir)
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            n: self.full.len(),
            f: self.full.num_features(),
            v: self.full.vocab().len(),
            n_pool: self.retriever.pool().len(),
            n_train: self.train.len(),
            n_test: self.test.len(),
        }
    }

    pub fn reproducibility(&self) -> Reproducibility {
        Reproducibility {
            seed: self.config.seed,
            config_hash: self.hash.clone(),
            index_fingerprint: format!("{:016x}", self.retriever.index().fingerprint()),
        }
    }

    fn field_index(&self, name: &str) -> Result<usize> {
        self.full
            .schema()
            .feature_index(name)
            .ok_or_else(|| RimError::Config(format!("unknown feature field `{name}`")))
    }

    /// Library-level mode for a live retrieval config.
    pub fn mode(&self, retrieval: &RetrievalConfig) -> Result<RetrievalMode> {
        Ok(match retrieval {
            RetrievalConfig::Bm25 => RetrievalMode::Bm25,
            RetrievalConfig::Random => RetrievalMode::Random { seed: self.config.seed },
            RetrievalConfig::Filtered { field } => RetrievalMode::Filtered {
                field: self.field_index(field)?,
            },
            RetrievalConfig::None => RetrievalMode::None,
            RetrievalConfig::Cached { .. } => return Err(RimError::Config("cached retrieval has no live mode".into())),
        })
    }

    /// Neighbor source used for both training and test targets.
    pub fn source(&self, retrieval: &RetrievalConfig, k: usize) -> Result<Box<dyn NeighborSource>> {
        if let RetrievalConfig::Cached { path } = retrieval {
            let cache = RetrievalCache::load(path)?;
            let prov = *cache.provenance();
            let expected = Provenance {
                index_fingerprint: self.retriever.index().fingerprint(),
                k: k as u32,
                mode: prov.mode,
                params: *self.retriever.params(),
            };
            if prov != expected {
                return Err(RimError::StaleCache(format!(
                    "cache {} was built for {prov:?}, experiment expects {expected:?}",
                    path.display()
                )));
            }
            return Ok(Box::new(CacheSource { cache }));
        }
        let mode = self.mode(retrieval)?;
        if mode == RetrievalMode::None || k == 0 {
            return Ok(Box::new(NoRetrieval));
        }
        Ok(match &self.folds {
            Some(folds) => Box::new(KFoldSource::build(
                &self.train,
                folds,
                &self.stop_fields,
                self.config.ranking,
                mode,
                k,
            )?),
            None => Box::new(PoolSource {
                retriever: self.retriever.clone(),
                mode,
                k,
            }),
        })
    }

    fn shape(&self, train: &TrainConfig) -> Result<ModelShape> {
        ModelShape::for_table(&self.train, train, self.config.task)
    }
}

/// Writes the index to the run directory.
pub fn build_index_command(exp: &Experiment) -> Result<IndexStats> {
    exp.ensure_run_dir()?;
    let index = exp.retriever.index();
    let path = exp.artifact("index.bin");
    index.save(&path)?;
    Ok(IndexStats {
        num_docs: index.num_docs(),
        num_fields: index.num_fields(),
        vocab: exp.full.vocab().len(),
        indexed_features: index.num_indexed_features(),
        total_postings: index.total_postings(),
        stop_fields: exp
            .stop_fields
            .iter()
            .map(|&f| exp.full.schema().feature(f).name.clone())
            .collect(),
        posting_length_histogram: index.posting_length_histogram(),
        fingerprint: format!("{:016x}", index.fingerprint()),
        build_seconds: exp.index_build_seconds,
        path,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrieveSummary {
    pub targets: usize,
    pub mode: String,
    pub k: usize,
    pub mean_query_ms: f64,
    pub oracle_checked: bool,
    pub cache: Option<PathBuf>,
}

/// One JSON line per target: `{"target", "neighbors": [{"id", "score", "label"}]}`.
pub fn retrieval_line(target: u64, set: &RetrievedSet) -> Value {
    json!({
        "target": target,
        "neighbors": set
            .neighbors
            .iter()
            .map(|n| json!({"id": n.id, "score": n.score, "label": n.label}))
            .collect::<Vec<_>>(),
    })
}

/// Retrieves neighbors for `targets` (default: train and test rows) and
/// writes JSON lines to `out`. With the time split the results are also
/// stored as a cache file. `oracle` re-ranks every query exhaustively and
/// fails on any difference.
pub fn retrieve_command(
    exp: &Experiment,
    targets: Option<&Path>,
    oracle: bool,
    out: &mut dyn Write,
) -> Result<RetrieveSummary> {
    let k = exp.config.train.k;
    let retrieval = &exp.config.retrieval;
    let mode = exp.mode(retrieval)?;
    let table = match targets {
        Some(p) => load_table_like(p, &exp.full)?,
        None => {
            let mut rows = exp.train.samples().to_vec();
            rows.extend_from_slice(exp.test.samples());
            exp.full.with_samples(rows)
        }
    };
    if oracle && exp.retriever.pool().len() > ORACLE_MAX_POOL {
        return Err(RimError::Config(format!(
            "--oracle needs a pool of at most {ORACLE_MAX_POOL} rows, this one has {}",
            exp.retriever.pool().len()
        )));
    }
    let source = exp.source(retrieval, k)?;
    let mut cache = match exp.folds {
        None => Some(RetrievalCache::new(Provenance::of(&exp.retriever, k, mode))),
        Some(_) => None,
    };
    let start = Instant::now();
    for s in table.samples() {
        let set = source.neighbors(s)?;
        if oracle && matches!(mode, RetrievalMode::Bm25) {
            let retriever = match &exp.folds {
                None => &exp.retriever,
                Some(_) => {
                    return Err(RimError::Config(
                        "--oracle is only available with the time split".into(),
                    ));
                }
            };
            let expected = retriever.brute_force_topk(&make_query(s), k);
            let same = expected.len() == set.len()
                && expected
                    .iter()
                    .zip(&set.neighbors)
                    .all(|(e, n)| e.id == n.id && (e.score - n.score).abs() <= 1e-9 * e.score.abs().max(1.0));
            if !same {
                return Err(RimError::OracleMismatch(format!(
                    "target {}: index returned {:?}, exhaustive scoring {:?}",
                    s.id,
                    set.ids(),
                    expected.iter().map(|d| d.id).collect::<Vec<_>>()
                )));
            }
        }
        serde_json::to_writer(&mut *out, &retrieval_line(s.id, &set)).map_err(|e| RimError::Data(e.to_string()))?;
        writeln!(out).map_err(|e| RimError::io("<output>", e))?;
        if let Some(c) = &mut cache {
            c.insert(s.id, set);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let cache_path = match cache {
        Some(c) => {
            exp.ensure_run_dir()?;
            let p = exp.artifact(&format!("cache_{}_k{k}.bin", mode.name()));
            c.save(&p)?;
            Some(p)
        }
        None => None,
    };
    Ok(RetrieveSummary {
        targets: table.len(),
        mode: retrieval.label(),
        k,
        mean_query_ms: 1e3 * elapsed / table.len().max(1) as f64,
        oracle_checked: oracle && matches!(mode, RetrievalMode::Bm25),
        cache: cache_path,
    })
}

/// Binary: AUC and log loss. Regression: RMSE.
pub fn point_metrics(task: TaskKind, predictions: &[f64], targets: &Table) -> Result<BTreeMap<String, f64>> {
    let records: Vec<PredictionRecord> = predictions
        .iter()
        .zip(targets.samples())
        .map(|(&p, s)| PredictionRecord::new(p, s.label))
        .collect();
    let mut m = BTreeMap::new();
    match task {
        TaskKind::Binary => {
            m.insert("auc".into(), auc(&records)?);
            m.insert("log_loss".into(), log_loss(&records)?);
        }
        TaskKind::Regression => {
            m.insert("rmse".into(), rmse(&records)?);
        }
    }
    Ok(m)
}

/// Ranked lists for every positive test row: the positive first, then
/// `negatives` copies with a different item drawn uniformly without
/// replacement from the item field's vocabulary.
pub fn ranking_lists(
    params: &ModelParams,
    exp: &Experiment,
    source: &dyn NeighborSource,
    cfg: &RankingEvalConfig,
) -> Result<Vec<RankedList>> {
    let field = exp.field_index(&cfg.item_field)?;
    if exp.full.schema().feature(field).kind == FieldKind::MultiCategorical {
        return Err(RimError::Config("ranking item field must be single-valued".into()));
    }
    let items = exp.full.vocab().field_ids(field);
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.seed);
    let mut lists = Vec::new();
    for s in exp.test.samples().iter().filter(|s| s.label >= 0.5) {
        let truth = s.slots[field].ids().first().copied();
        let pool: Vec<u32> = items.iter().copied().filter(|&i| Some(i) != truth).collect();
        if pool.is_empty() {
            return Err(RimError::Data("item field has no negative candidates".into()));
        }
        let n = cfg.negatives.min(pool.len());
        let mut scores = Vec::with_capacity(n + 1);
        let mut candidate = s.clone();
        let positive = source.neighbors(&candidate)?;
        scores.push(params.forward(&candidate.slots, &positive)?.y_hat);
        for j in sample(&mut rng, pool.len(), n) {
            candidate.slots[field] = Slot::One(pool[j]);
            let set = source.neighbors(&candidate)?;
            scores.push(params.forward(&candidate.slots, &set)?.y_hat);
        }
        lists.push(RankedList::with_positive(scores, 0)?);
    }
    Ok(lists)
}

/// Fills `metrics` with point metrics (and ranking metrics when configured).
fn evaluate_params(
    exp: &Experiment,
    params: &ModelParams,
    source: &dyn NeighborSource,
    test_neighbors: &[RetrievedSet],
) -> Result<BTreeMap<String, f64>> {
    let predictions = predict(params, &exp.test, test_neighbors)?;
    let mut metrics = point_metrics(exp.config.task, &predictions, &exp.test)?;
    if let Some(r) = &exp.config.ranking_eval {
        let lists = ranking_lists(params, exp, source, r)?;
        let summary = ranking_summary(&lists, r.k)?;
        metrics.insert(format!("hr@{}", r.k), summary.hr);
        metrics.insert(format!("ndcg@{}", r.k), summary.ndcg);
        metrics.insert("mrr".into(), summary.mrr);
    }
    Ok(metrics)
}

/// Gathers neighbors for `targets`, returning them with the mean latency in ms.
fn timed_gather(source: &dyn NeighborSource, targets: &Table) -> Result<(Vec<RetrievedSet>, f64)> {
    let start = Instant::now();
    let sets = gather(source, targets)?;
    let ms = 1e3 * start.elapsed().as_secs_f64() / targets.len().max(1) as f64;
    Ok((sets, ms))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub train_seconds: f64,
    pub retrieval_seconds: f64,
}

/// Trains with the configured retrieval, evaluating on the test split after
/// every epoch. Writes `model.bin`, `train_log.jsonl` and `train_summary.json`.
pub fn train_command(exp: &Experiment) -> Result<TrainSummary> {
    exp.ensure_run_dir()?;
    let cfg = &exp.config;
    let source = exp.source(&cfg.retrieval, cfg.train.k)?;
    let start = Instant::now();
    let train_neighbors = gather(source.as_ref(), &exp.train)?;
    let test_neighbors = if exp.test.is_empty() {
        Vec::new()
    } else {
        gather(source.as_ref(), &exp.test)?
    };
    let retrieval_seconds = start.elapsed().as_secs_f64();

    let log_path = exp.artifact("train_log.jsonl");
    let file = File::create(&log_path).map_err(|e| RimError::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut trainer = Trainer::new(cfg.train.clone(), exp.shape(&cfg.train)?)?;
    let start = Instant::now();
    let mut last = f64::NAN;
    for epoch in 0..cfg.train.epochs {
        last = trainer.run_epoch(&exp.train, &train_neighbors)?;
        let eval = if exp.test.is_empty() {
            BTreeMap::new()
        } else {
            let p = predict(&trainer.params, &exp.test, &test_neighbors)?;
            point_metrics(cfg.task, &p, &exp.test).unwrap_or_default()
        };
        let line = EpochLog {
            epoch,
            train_loss: last,
            eval,
        };
        log::info!("epoch {epoch}: loss {last:.5} {:?}", line.eval);
        serde_json::to_writer(&mut log, &line).map_err(|e| RimError::Data(e.to_string()))?;
        writeln!(log).map_err(|e| RimError::io(&log_path, e))?;
    }
    log.flush().map_err(|e| RimError::io(&log_path, e))?;
    let train_seconds = start.elapsed().as_secs_f64();
    let checkpoint = exp.artifact("model.bin");
    trainer.params.save(&checkpoint)?;
    let summary = TrainSummary {
        checkpoint,
        log: log_path,
        epochs: cfg.train.epochs,
        final_train_loss: last,
        train_seconds,
        retrieval_seconds,
    };
    write_json(&exp.artifact("train_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub index_build_seconds: f64,
    pub mean_query_ms: f64,
    pub train_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub reproducibility: Reproducibility,
    pub stats: DatasetStats,
    pub timings: Timings,
    pub metrics: BTreeMap<String, f64>,
    pub n: usize,
    pub k: usize,
    pub epoch_log: Option<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RimError::Data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| RimError::io(path, e))
}

/// Evaluates a checkpoint (default: the run's `model.bin`) on the test split
/// and writes `report.json`.
pub fn evaluate_command(exp: &Experiment, checkpoint: Option<&Path>) -> Result<Report> {
    let cfg = &exp.config;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| exp.artifact("model.bin"));
    if !path.exists() {
        return Err(RimError::Config(format!(
            "checkpoint {} not found; run `rim train` first",
            path.display()
        )));
    }
    let params = ModelParams::load(&path)?;
    if params.shape != exp.shape(&cfg.train)? {
        return Err(RimError::Config("checkpoint shape does not match the config".into()));
    }
    if exp.test.is_empty() {
        return Err(RimError::Data("test split is empty".into()));
    }
    let source = exp.source(&cfg.retrieval, cfg.train.k)?;
    let (test_neighbors, mean_query_ms) = timed_gather(source.as_ref(), &exp.test)?;
    let metrics = evaluate_params(exp, &params, source.as_ref(), &test_neighbors)?;
    let summary: Option<TrainSummary> = std::fs::read_to_string(exp.artifact("train_summary.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let log = exp.artifact("train_log.jsonl");
    let report = Report {
        config: cfg.clone(),
        reproducibility: exp.reproducibility(),
        stats: exp.stats(),
        timings: Timings {
            index_build_seconds: exp.index_build_seconds,
            mean_query_ms,
            train_seconds: summary.map(|s| s.train_seconds),
        },
        metrics,
        n: exp.test.len(),
        k: cfg.train.k,
        epoch_log: log.exists().then_some(log),
    };
    exp.ensure_run_dir()?;
    write_json(&exp.artifact("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mode: String,
    pub use_labels: bool,
    pub interaction: InteractionKind,
    pub k: usize,
    pub metrics: BTreeMap<String, f64>,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub reproducibility: Reproducibility,
    pub stats: DatasetStats,
    pub rows: Vec<AblationRow>,
    pub total_seconds: f64,
}

impl AblationReport {
    /// Row for one setting, if it was run.
    pub fn find(&self, mode: &str, use_labels: bool, interaction: InteractionKind, k: usize) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.use_labels == use_labels && r.interaction == interaction && r.k == k)
    }

    /// Fixed-width text table, one row per run.
    pub fn table(&self) -> String {
        let metric_names: Vec<String> = self
            .rows
            .first()
            .map(|r| r.metrics.keys().cloned().collect())
            .unwrap_or_default();
        let mut out = format!("{:<22} {:>6} {:>11} {:>4}", "retrieval", "labels", "interaction", "K");
        for m in &metric_names {
            out.push_str(&format!(" {m:>10}"));
        }
        out.push_str(&format!(" {:>9}\n", "train_s"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<22} {:>6} {:>11} {:>4}",
                r.mode,
                if r.use_labels { "yes" } else { "no" },
                r.interaction.name(),
                r.k
            ));
            for m in &metric_names {
                out.push_str(&format!(" {:>10.4}", r.metrics.get(m).copied().unwrap_or(f64::NAN)));
            }
            out.push_str(&format!(" {:>9.2}\n", r.train_seconds));
        }
        out
    }
}

/// Runs every combination of retrieval mode, K, label path and interaction
/// kind; retrieval happens once per (mode, K). Writes `ablation.json`.
pub fn ablate_command(exp: &Experiment) -> Result<AblationReport> {
    let cfg = &exp.config;
    if exp.test.is_empty() {
        return Err(RimError::Data("test split is empty".into()));
    }
    let ab = &cfg.ablation;
    let k_list = if ab.k_list.is_empty() {
        vec![cfg.train.k]
    } else {
        ab.k_list.clone()
    };
    let start = Instant::now();
    let mut rows = Vec::new();
    for mode in &ab.modes {
        let ks: Vec<usize> = if matches!(mode, RetrievalConfig::None) {
            vec![0]
        } else {
            k_list.clone()
        };
        for &k in &ks {
            let source = exp.source(mode, k)?;
            let train_neighbors = gather(source.as_ref(), &exp.train)?;
            let test_neighbors = gather(source.as_ref(), &exp.test)?;
            for &use_labels in &ab.labels {
                for &interaction in &ab.interactions {
                    let train_cfg = TrainConfig {
                        k,
                        use_labels,
                        interaction,
                        ..cfg.train.clone()
                    };
                    let t0 = Instant::now();
                    let out = fit(&train_cfg, cfg.task, &exp.train, &train_neighbors)?;
                    let train_seconds = t0.elapsed().as_secs_f64();
                    let metrics = evaluate_params(exp, &out.params, source.as_ref(), &test_neighbors)?;
                    log::info!(
                        "{} labels={use_labels} {} K={k}: {metrics:?}",
                        mode.label(),
                        interaction.name()
                    );
                    rows.push(AblationRow {
                        mode: mode.label(),
                        use_labels,
                        interaction,
                        k,
                        metrics,
                        train_seconds,
                    });
                }
            }
        }
    }
    let report = AblationReport {
        reproducibility: exp.reproducibility(),
        stats: exp.stats(),
        rows,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    exp.ensure_run_dir()?;
    write_json(&exp.artifact("ablation.json"), &report)?;
    Ok(report)
}
