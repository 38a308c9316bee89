//! Writes generated corpora in the ingestion formats.
//!
//! Ids are zero-padded (`u007`, `i0042`, `n03`) so their lexicographic order
//! matches the generator's numbering, and a reloaded corpus gets the same
//! dense ids back.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hvbpr_core::synthdata::{GroundTruth, SynthConfig, SynthCorpus};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, RawFeatures};
use crate::ingest::InputPaths;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    #[default]
    Binary,
    Csv,
}

/// Contents of `truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config: SynthConfig,
    pub truth: GroundTruth,
}

#[derive(Clone, Debug)]
pub struct SynthFiles {
    pub inputs: InputPaths,
    pub truth: PathBuf,
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

pub fn user_id(u: usize, users: usize) -> String {
    format!("u{u:0w$}", w = width(users))
}

pub fn item_id(i: usize, items: usize) -> String {
    format!("i{i:0w$}", w = width(items))
}

pub fn node_id(n: usize, nodes: usize) -> String {
    format!("n{n:0w$}", w = width(nodes))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn export(corpus: &SynthCorpus, dir: &Path, format: FeatureFormat) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &corpus.config;
    let h = &corpus.hierarchy;
    let nodes = h.node_count();

    let mut s = String::new();
    for &(u, i) in &corpus.feedback {
        writeln!(s, "{}\t{}", user_id(u.index(), cfg.users), item_id(i.index(), cfg.items)).unwrap();
    }
    let feedback = dir.join("feedback.tsv");
    write(&feedback, &s)?;

    s.clear();
    for (child, parent) in h.edges() {
        writeln!(s, "{}\t{}", node_id(child.index(), nodes), node_id(parent.index(), nodes)).unwrap();
    }
    let hierarchy = dir.join("hierarchy.tsv");
    write(&hierarchy, &s)?;

    s.clear();
    for (i, leaf) in h.item_leaves().iter().enumerate() {
        writeln!(s, "{}\t{}", item_id(i, cfg.items), node_id(leaf.index(), nodes)).unwrap();
    }
    let item_leaves = dir.join("item_leaves.tsv");
    write(&item_leaves, &s)?;

    let raw = RawFeatures {
        dim: corpus.features.dim(),
        ids: (0..cfg.items).map(|i| item_id(i, cfg.items)).collect(),
        values: corpus.features.as_slice().to_vec(),
    };
    let features = match format {
        FeatureFormat::Binary => {
            let p = dir.join("features.bin");
            features::write_binary(&p, &raw)?;
            p
        }
        FeatureFormat::Csv => {
            let p = dir.join("features.csv");
            features::write_csv(&p, &raw)?;
            p
        }
    };

    let truth = dir.join("truth.json");
    let record = TruthRecord { config: cfg.clone(), truth: corpus.truth.clone() };
    let json = serde_json::to_string(&record).map_err(|e| Error::format(&truth, e.to_string()))?;
    write(&truth, &json)?;

    Ok(SynthFiles { inputs: InputPaths { feedback, features, hierarchy, item_leaves }, truth })
}
