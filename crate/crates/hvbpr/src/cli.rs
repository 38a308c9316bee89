//! Command-line interface. [`run`] executes a parsed command and writes its
//! primary output to the given sink, so tests can drive it in-process.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hvbpr_core::evaluation::split_leave_one_out;
use hvbpr_core::model::ItemFilter;
use hvbpr_core::synthdata::{self, SynthConfig};
use hvbpr_core::{ColdItemSet, ItemId, ModelKind, NodeId, TrainingCorpus, UserId};
use serde_json::json;

use crate::bench::{per_triple_cost_probe, ProbeConfig, ProbeOptions};
use crate::checkpoint::{Checkpoint, Seeds};
use crate::error::{Context, Error, Result};
use crate::experiment::{
    evaluate_setting, fit, make_checkpoint, metrics_tsv, prepare, read_manifests, run_experiment, write_json,
    ModelSpec, TrainSpec, TrainingEcho,
};
use crate::ingest::{load_corpus, read_feedback, FeatureNorm, InputPaths, Policy};
use crate::synth::{self, FeatureFormat};

#[derive(Debug, Parser)]
#[command(name = "hvbpr", version, about = "Hierarchical visual BPR: train, evaluate and inspect models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

// parsed once per process; boxing the larger variants buys nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted hierarchical preferences.
    Synth(SynthArgs),
    /// Load and check input files; print the ingest report.
    Validate(ValidateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out test items.
    Eval(EvalArgs),
    /// List the items scoring highest on one visual dimension.
    RankDim(RankDimArgs),
    /// Time single triple updates across model shapes.
    BenchStep(BenchArgs),
    /// Run one or more experiment manifests.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Children per node on each layer below the root, e.g. `4,5`.
    #[arg(long, value_delimiter = ',')]
    pub branching: Option<Vec<usize>>,
    #[arg(long)]
    pub positives: Option<usize>,
    /// Planted preference rows per layer, top-down.
    #[arg(long, value_delimiter = ',')]
    pub planted: Option<Vec<usize>>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub cluster_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FeatureFormat::Binary)]
    pub feature_format: FeatureFormat,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            users: self.users.unwrap_or(d.users),
            items: self.items.unwrap_or(d.items),
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            branching: self.branching.clone().unwrap_or(d.branching),
            positives_per_user: self.positives.unwrap_or(d.positives_per_user),
            planted_rows: self.planted.clone().unwrap_or(d.planted_rows),
            cluster_scale: self.cluster_scale.unwrap_or(d.cluster_scale),
            temperature: self.temperature.unwrap_or(d.temperature),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// `user<TAB>item` rows.
    #[arg(long)]
    pub feedback: PathBuf,
    /// Binary (`HVBPRFT1` + `.ids` sidecar) or CSV feature file.
    #[arg(long)]
    pub features: PathBuf,
    /// `child<TAB>parent` rows.
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// `item<TAB>leaf` rows.
    #[arg(long)]
    pub item_leaves: PathBuf,
    #[arg(long, default_value_t = Policy::Strict)]
    pub policy: Policy,
}

impl InputArgs {
    fn paths(&self) -> InputPaths {
        InputPaths {
            feedback: self.feedback.clone(),
            features: self.features.clone(),
            hierarchy: self.hierarchy.clone(),
            item_leaves: self.item_leaves.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long, default_value_t = FeatureNorm::None)]
    pub feature_norm: FeatureNorm,
    /// rand, bpr-mf, vbpr, vbpr-c or hierarchical.
    #[arg(long, default_value_t = ModelKind::Hierarchical)]
    pub model_kind: ModelKind,
    /// Visual rows per layer, e.g. `5:3:2`; all on the root if absent.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub kprime: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many epochs without a better validation AUC.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub reg_bias: Option<f64>,
    #[arg(long)]
    pub reg_latent: Option<f64>,
    #[arg(long)]
    pub reg_user_visual: Option<f64>,
    #[arg(long)]
    pub reg_visual_bias: Option<f64>,
    #[arg(long)]
    pub reg_segments: Option<f64>,
    #[arg(long)]
    pub reg_category_bias: Option<f64>,
    /// Default for the split, init and sampling seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub sampling_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch TSV: epoch, val_auc, train_loss_estimate, seconds.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

impl TrainArgs {
    pub fn seeds(&self) -> Seeds {
        Seeds {
            split: self.split_seed.unwrap_or(self.seed),
            init: self.init_seed.unwrap_or(self.seed),
            sampling: self.sampling_seed.unwrap_or(self.seed),
        }
    }

    pub fn train_spec(&self) -> TrainSpec {
        let mut s = TrainSpec::default();
        s.learning_rate = self.lr.unwrap_or(s.learning_rate);
        s.epochs = self.epochs.unwrap_or(s.epochs);
        s.patience = self.patience;
        let r = &mut s.reg;
        for (slot, v) in [
            (&mut r.bias, self.reg_bias),
            (&mut r.latent, self.reg_latent),
            (&mut r.user_visual, self.reg_user_visual),
            (&mut r.visual_bias, self.reg_visual_bias),
            (&mut r.segments, self.reg_segments),
            (&mut r.category_bias, self.reg_category_bias),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        s
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec { kind: self.model_kind, k: self.k, kprime: self.kprime, scheme: self.scheme.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SettingArg {
    Warm,
    Cold,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// The feedback the model was trained on; it is re-split with the
    /// checkpoint's split seed.
    #[arg(long)]
    pub feedback: PathBuf,
    #[arg(long, value_enum, default_value_t = SettingArg::Warm)]
    pub setting: SettingArg,
    #[arg(long, default_value_t = ColdItemSet::DEFAULT_THRESHOLD)]
    pub cold_threshold: u32,
    /// Approximate AUC from this many sampled negatives per user.
    #[arg(long)]
    pub sample_candidates: Option<usize>,
    /// Report path; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankDimArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dim: usize,
    /// Restrict to items under this category node.
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// TSV path; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub kprime: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "512,1024")]
    pub feature_dim: Vec<usize>,
    #[arg(long, default_value_t = ProbeOptions::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = ProbeOptions::default().rounds)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON file holding one manifest or a list of them.
    pub manifest: PathBuf,
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Fails if an output path names an existing input file.
fn ensure_distinct(outputs: &[&Path], inputs: &[&Path]) -> Result<()> {
    for o in outputs {
        let Ok(o_abs) = o.canonicalize() else { continue };
        if inputs.iter().any(|i| i.canonicalize().is_ok_and(|i| i == o_abs)) {
            return Err(Error::Invalid(format!("output {} would overwrite an input", o.display())));
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth_cmd(&a, stdout),
        Command::Validate(a) => {
            let (_, report) = load_corpus(&a.inputs.paths(), a.inputs.policy)?;
            let s = serde_json::to_string_pretty(&report).expect("report serializes");
            writeln!(stdout, "{s}").map_err(out_err)
        }
        Command::Train(a) => train_cmd(&a, stdout),
        Command::Eval(a) => eval_cmd(&a, stdout),
        Command::RankDim(a) => rank_dim_cmd(&a, stdout),
        Command::BenchStep(a) => bench_cmd(&a, stdout),
        Command::Run(a) => {
            for m in read_manifests(&a.manifest)? {
                let out = run_experiment(&m)?;
                writeln!(stdout, "{}\t{}", m.name, out.report.display()).map_err(out_err)?;
            }
            Ok(())
        }
    }
}

fn synth_cmd(a: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let corpus = synthdata::generate(&a.config()).context(|| "synthetic corpus".into())?;
    let files = synth::export(&corpus, &a.out_dir, a.feature_format)?;
    let v = json!({ "inputs": files.inputs, "truth": files.truth });
    writeln!(stdout, "{}", serde_json::to_string_pretty(&v).unwrap()).map_err(out_err)
}

fn train_cmd(a: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let inputs = a.inputs.paths();
    let input_list = [&*inputs.feedback, &*inputs.features, &*inputs.hierarchy, &*inputs.item_leaves];
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.metrics.as_deref());
    ensure_distinct(&outputs, &input_list)?;

    let seeds = a.seeds();
    let prepared = prepare(&inputs, a.inputs.policy, a.feature_norm, seeds.split)?;
    let model_config = a.model_spec().to_config(seeds.init)?;
    let train_config = a.train_spec().to_config(seeds.sampling);
    let (model, summary, rows) = fit(&prepared, model_config, &train_config, |r| {
        let auc = r.val_auc.map_or_else(|| "NA".into(), |v| format!("{v:.4}"));
        eprintln!("epoch {:>3}  val_auc {auc}  loss {:.4}", r.epoch, r.train_loss);
    })?;
    let ck = make_checkpoint(&prepared, model, seeds, train_config, a.inputs.policy, a.feature_norm)?;
    ck.save(&a.out)?;
    if let Some(p) = &a.metrics {
        write_text(p, &metrics_tsv(&rows))?;
    }
    let v = json!({ "checkpoint": a.out, "seeds": seeds, "training": TrainingEcho::from(summary) });
    writeln!(stdout, "{}", serde_json::to_string_pretty(&v).unwrap()).map_err(out_err)
}

/// Maps external feedback ids through the checkpoint's id maps. Unknown ids
/// are dropped when the checkpoint was trained with pruning, errors otherwise.
pub fn map_feedback(ck: &Checkpoint, feedback: &Path) -> Result<Vec<(UserId, ItemId)>> {
    let (pairs, _) = read_feedback(feedback)?;
    let mut out = Vec::with_capacity(pairs.len());
    for (u, i) in &pairs {
        match (ck.users.get(u), ck.items.get(i)) {
            (Some(u), Some(i)) => out.push((UserId(u), ItemId(i))),
            _ if ck.policy == Policy::Prune => {}
            (None, _) => return Err(Error::UnknownId { kind: "user", id: u.clone() }),
            (_, None) => return Err(Error::UnknownId { kind: "item", id: i.clone() }),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    out.sort_unstable();
    Ok(out)
}

fn eval_cmd(a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    if let Some(o) = &a.out {
        ensure_distinct(&[o], &[&a.model, &a.feedback])?;
    }
    let start = Instant::now();
    let ck = Checkpoint::load(&a.model)?;
    let pairs = map_feedback(&ck, &a.feedback)?;
    let (train_set, split): (TrainingCorpus, _) =
        split_leave_one_out(ck.users.len(), ck.items.len(), &pairs, ck.seeds.split)
            .context(|| "leave-one-out split".into())?;
    let cold = a.setting == SettingArg::Cold;
    let report = evaluate_setting(&ck, &train_set, &split, a.cold_threshold, cold, a.sample_candidates)?;
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => writeln!(stdout, "{}", serde_json::to_string_pretty(&report).unwrap()).map_err(out_err)?,
    }
    eprintln!("eval wall time: {:.3}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn rank_dim_cmd(a: &RankDimArgs, stdout: &mut dyn Write) -> Result<()> {
    if let Some(o) = &a.out {
        ensure_distinct(&[o], &[&a.model])?;
    }
    let ck = Checkpoint::load(&a.model)?;
    let filter = match &a.category {
        Some(c) => {
            let n = ck.nodes.get(c).ok_or_else(|| Error::UnknownId { kind: "node", id: c.clone() })?;
            ItemFilter::Category(NodeId(n))
        }
        None => ItemFilter::All,
    };
    let ranked = ck.model.scorer(&ck.frozen).rank_by_dimension(a.dim, filter, a.top).context(|| "rank-dim".into())?;
    let mut tsv = String::from("rank\titem_id\tscore\n");
    for (r, (item, score)) in ranked.iter().enumerate() {
        tsv.push_str(&format!("{}\t{}\t{score}\n", r + 1, ck.items.name(item.0)));
    }
    match &a.out {
        Some(p) => write_text(p, &tsv),
        None => stdout.write_all(tsv.as_bytes()).map_err(out_err),
    }
}

fn bench_cmd(a: &BenchArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut configs = Vec::new();
    for &k in &a.k {
        for &kprime in &a.kprime {
            for &feature_dim in &a.feature_dim {
                configs.push(ProbeConfig { k, kprime, feature_dim });
            }
        }
    }
    let opts = ProbeOptions { steps: a.steps, rounds: a.rounds, seed: a.seed, ..ProbeOptions::default() };
    let rows = per_triple_cost_probe(&configs, &opts)?;
    let mut tsv = String::from("k\tkprime\tfeature_dim\tsteps\tmean_ns\tmedian_ns\n");
    for r in rows {
        let c = r.config;
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.1}\t{:.1}\n",
            c.k, c.kprime, c.feature_dim, r.steps, r.mean_ns, r.median_ns
        ));
    }
    stdout.write_all(tsv.as_bytes()).map_err(out_err)
}
