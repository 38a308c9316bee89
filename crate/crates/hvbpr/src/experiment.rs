//! End-to-end runs: split, train with per-epoch validation, keep the best
//! epoch, evaluate on the test items, write checkpoint, metrics and report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hvbpr_core::evaluation::{self, split_leave_one_out};
use hvbpr_core::model::{make_baseline, BaselineBudget};
use hvbpr_core::training::{train, TrainSummary};
use hvbpr_core::{
    AllocationScheme, ColdItemSet, EvalSplit, Model, ModelConfig, ModelKind, RegConfig, Setting, Target, TrainConfig,
    TrainingCorpus,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Seeds};
use crate::error::{Context, Error, Result};
use crate::ingest::{load_corpus, Corpus, FeatureNorm, IngestReport, InputPaths, Policy};

/// Model shape in a manifest. `k + kprime` is the total dimension budget;
/// BPR-MF spends all of it on latent factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_dims")]
    pub k: usize,
    #[serde(default = "default_dims")]
    pub kprime: usize,
    /// Allocation scheme such as `"5:3:2"`; all rows on the root if absent.
    #[serde(default)]
    pub scheme: Option<String>,
}

fn default_dims() -> usize {
    10
}

impl ModelSpec {
    pub fn to_config(&self, init_seed: u64) -> Result<ModelConfig> {
        let scheme = match &self.scheme {
            Some(s) => Some(s.parse::<AllocationScheme>().context(|| format!("scheme `{s}`"))?),
            None => None,
        };
        let budget = BaselineBudget { total_dims: self.k + self.kprime, visual_dims: self.kprime, scheme, init_seed };
        make_baseline(self.kind, &budget).context(|| format!("{} model", self.kind))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Early-stopping patience in epochs. Without it every epoch runs, and
    /// the epoch with the best validation AUC is still the one kept.
    pub patience: Option<usize>,
    pub reg: RegConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSpec { learning_rate: d.learning_rate, epochs: d.epochs, patience: None, reg: d.reg }
    }
}

impl TrainSpec {
    pub fn to_config(&self, sampling_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            reg: self.reg,
            epochs: self.epochs,
            seed: sampling_seed,
            // keep the best epoch even when not stopping early
            patience: Some(self.patience.unwrap_or(self.epochs)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    #[serde(default = "default_name")]
    pub name: String,
    /// Relative paths resolve against the manifest's directory.
    pub inputs: InputPaths,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub feature_norm: FeatureNorm,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_cold_threshold")]
    pub cold_threshold: u32,
    pub out_dir: PathBuf,
}

fn default_name() -> String {
    "run".into()
}

fn default_cold_threshold() -> u32 {
    ColdItemSet::DEFAULT_THRESHOLD
}

/// A manifest file holds one manifest or a list of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    One(Box<ExperimentManifest>),
    Many(Vec<ExperimentManifest>),
}

/// Reads manifests and resolves their relative paths.
pub fn read_manifests(path: &Path) -> Result<Vec<ExperimentManifest>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut list = match parsed {
        ManifestFile::One(m) => vec![*m],
        ManifestFile::Many(v) => v,
    };
    for m in &mut list {
        m.inputs = m.inputs.relative_to(base);
        if m.out_dir.is_relative() {
            m.out_dir = base.join(&m.out_dir);
        }
    }
    Ok(list)
}

/// Loaded data plus the leave-one-out split.
pub struct Prepared {
    pub corpus: Corpus,
    pub ingest: IngestReport,
    pub train_set: TrainingCorpus,
    pub split: EvalSplit,
}

pub fn prepare(inputs: &InputPaths, policy: Policy, norm: FeatureNorm, split_seed: u64) -> Result<Prepared> {
    let (mut corpus, ingest) = load_corpus(inputs, policy)?;
    corpus.normalize_features(norm);
    let (train_set, split) = split_leave_one_out(corpus.users.len(), corpus.items.len(), &corpus.pairs, split_seed)
        .context(|| "leave-one-out split".into())?;
    Ok(Prepared { corpus, ingest, train_set, split })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub val_auc: Option<f64>,
    pub train_loss: f64,
    pub seconds: f64,
}

pub fn metrics_tsv(rows: &[MetricRow]) -> String {
    let mut s = String::from("epoch\tval_auc\ttrain_loss_estimate\tseconds\n");
    for r in rows {
        let auc = r.val_auc.map_or_else(|| "NA".to_owned(), |a| format!("{a:.6}"));
        writeln!(s, "{}\t{}\t{:.6}\t{:.3}", r.epoch, auc, r.train_loss, r.seconds).unwrap();
    }
    s
}

/// Trains a fresh model on `prepared` and returns it with per-epoch metrics.
pub fn fit(
    prepared: &Prepared,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricRow),
) -> Result<(Model, TrainSummary, Vec<MetricRow>)> {
    let c = &prepared.corpus;
    let mut model = Model::new(model_config, c.hierarchy.clone(), c.users.len(), c.features.dim())
        .context(|| "model construction".into())?;
    let mut rows = Vec::new();
    let start = Instant::now();
    let summary = train(&mut model, &prepared.train_set, &c.features, train_config, Some(&prepared.split), &mut |e| {
        let row = MetricRow {
            epoch: e.epoch,
            val_auc: e.val_auc,
            train_loss: e.train_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        rows.push(row);
    })
    .context(|| "training".into())?;
    Ok((model, summary, rows))
}

/// Configuration echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub policy: Policy,
    pub feature_norm: FeatureNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub setting: String,
    pub auc: f64,
    pub users_evaluated: usize,
    pub items_total: usize,
    pub cold_items: usize,
    pub cold_threshold: u32,
    /// Set when the AUC was estimated from sampled candidates.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sampled_candidates: Option<usize>,
    pub seed: Seeds,
    pub config: ConfigEcho,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingEcho {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
}

impl From<TrainSummary> for TrainingEcho {
    fn from(s: TrainSummary) -> Self {
        TrainingEcho { epochs_run: s.epochs_run, best_epoch: s.best_epoch, best_val_auc: s.best_val_auc }
    }
}

/// `report.json` of a run. Wall-clock times are kept out so reruns produce
/// identical bytes; they go to `metrics.tsv` and `timings.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub ingest: IngestReport,
    pub training: TrainingEcho,
    pub warm: SettingReport,
    /// Absent when no test item is cold.
    pub cold: Option<SettingReport>,
}

/// Evaluates a checkpointed model on the test items of `train_set`/`split`.
pub fn evaluate_setting(
    ck: &Checkpoint,
    train_set: &TrainingCorpus,
    split: &EvalSplit,
    cold_threshold: u32,
    cold_setting: bool,
    sampled: Option<usize>,
) -> Result<SettingReport> {
    let cold = ColdItemSet::from_training(train_set, cold_threshold);
    let setting = if cold_setting { Setting::Cold(&cold) } else { Setting::Warm };
    let scorer = ck.model.scorer(&ck.frozen);
    let r = match sampled {
        None => evaluation::auc(&scorer, train_set, split, setting, Target::Test),
        Some(n) => evaluation::auc_sampled(&scorer, train_set, split, setting, Target::Test, n, ck.seeds.split),
    }
    .context(|| format!("{} evaluation", setting.name()))?;
    Ok(SettingReport {
        setting: setting.name().to_owned(),
        auc: r.auc,
        users_evaluated: r.users_evaluated,
        items_total: train_set.item_count(),
        cold_items: cold.len(),
        cold_threshold,
        sampled_candidates: sampled,
        seed: ck.seeds,
        config: ConfigEcho {
            model: ck.model.config().clone(),
            train: ck.train.clone(),
            policy: ck.policy,
            feature_norm: ck.feature_norm,
        },
    })
}

pub fn make_checkpoint(
    prepared: &Prepared,
    model: Model,
    seeds: Seeds,
    train: TrainConfig,
    policy: Policy,
    norm: FeatureNorm,
) -> Result<Checkpoint> {
    let frozen = model.freeze_items(&prepared.corpus.features).context(|| "item projection".into())?;
    let c = &prepared.corpus;
    Ok(Checkpoint {
        users: c.users.clone(),
        items: c.items.clone(),
        nodes: c.nodes.clone(),
        model,
        frozen,
        seeds,
        train,
        policy,
        feature_norm: norm,
    })
}

/// Paths written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub metrics: PathBuf,
    pub timings: PathBuf,
    pub result: RunReport,
}

#[derive(Serialize)]
struct Timings {
    train_seconds: f64,
    eval_seconds: f64,
}

pub fn run_experiment(m: &ExperimentManifest) -> Result<RunOutputs> {
    run_inner(m).map_err(|e| Error::Manifest { name: m.name.clone(), source: Box::new(e) })
}

fn run_inner(m: &ExperimentManifest) -> Result<RunOutputs> {
    let prepared = prepare(&m.inputs, m.policy, m.feature_norm, m.seeds.split)?;
    let model_config = m.model.to_config(m.seeds.init)?;
    let train_config = m.train.to_config(m.seeds.sampling);

    let t0 = Instant::now();
    let (model, summary, rows) = fit(&prepared, model_config, &train_config, |_| {})?;
    let train_seconds = t0.elapsed().as_secs_f64();

    let ck = make_checkpoint(&prepared, model, m.seeds, train_config, m.policy, m.feature_norm)?;
    let t1 = Instant::now();
    let warm = evaluate_setting(&ck, &prepared.train_set, &prepared.split, m.cold_threshold, false, None)?;
    let cold = match evaluate_setting(&ck, &prepared.train_set, &prepared.split, m.cold_threshold, true, None) {
        Ok(r) => Some(r),
        Err(e) if e.is_no_evaluable_users() => None,
        Err(e) => return Err(e),
    };
    let eval_seconds = t1.elapsed().as_secs_f64();

    let result =
        RunReport { name: m.name.clone(), ingest: prepared.ingest.clone(), training: summary.into(), warm, cold };

    let dir = &m.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = RunOutputs {
        checkpoint: dir.join("model.ckpt"),
        report: dir.join("report.json"),
        metrics: dir.join("metrics.tsv"),
        timings: dir.join("timings.json"),
        result,
    };
    ck.save(&out.checkpoint)?;
    write_json(&out.report, &out.result)?;
    std::fs::write(&out.metrics, metrics_tsv(&rows)).map_err(|e| Error::io(&out.metrics, e))?;
    write_json(&out.timings, &Timings { train_seconds, eval_seconds })?;
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
