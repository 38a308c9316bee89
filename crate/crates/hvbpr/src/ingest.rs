//! Loading feedback, features and the category tree from text files.
//!
//! Feedback and tree files are tab-separated; blank lines and lines starting
//! with `#` are skipped. Feedback rows are `user<TAB>item` with any further
//! columns ignored, tree rows are `child<TAB>parent`, item rows are
//! `item<TAB>leaf`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hvbpr_core::{CategoryHierarchy, FeatureStore, ItemId, NodeId, UserId};
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};
use crate::features;
use crate::idmap::IdMap;

/// What to do with items that lack a feature vector or a category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Any such item is an error.
    #[default]
    Strict,
    /// Drop the item and its feedback, and list it in the report.
    Prune,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureNorm {
    #[default]
    None,
    L2,
}

macro_rules! lowercase_enum {
    ($t:ty { $($v:ident => $s:literal),* }) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(<$t>::$v),)*
                    _ => Err(Error::Invalid(format!("unknown {} `{s}`", stringify!($t)))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$t>::$v => $s,)* })
            }
        }
    };
}

lowercase_enum!(Policy { Strict => "strict", Prune => "prune" });
lowercase_enum!(FeatureNorm { None => "none", L2 => "l2" });

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPaths {
    pub feedback: PathBuf,
    pub features: PathBuf,
    pub hierarchy: PathBuf,
    pub item_leaves: PathBuf,
}

impl InputPaths {
    /// Resolves relative paths against `base`.
    pub fn relative_to(&self, base: &Path) -> InputPaths {
        let r = |p: &Path| if p.is_absolute() { p.to_owned() } else { base.join(p) };
        InputPaths {
            feedback: r(&self.feedback),
            features: r(&self.features),
            hierarchy: r(&self.hierarchy),
            item_leaves: r(&self.item_leaves),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub policy: Policy,
    pub users: usize,
    pub items: usize,
    pub nodes: usize,
    pub feedback_pairs: usize,
    pub duplicate_pairs: usize,
    pub feature_dim: usize,
    pub height: usize,
    pub effective_height: usize,
    /// Items dropped under [`Policy::Prune`], sorted.
    pub pruned_items: Vec<String>,
    pub pruned_pairs: usize,
    /// Users left without feedback after pruning.
    pub pruned_users: usize,
    /// Feature rows for items that appear in neither feedback nor the item
    /// file.
    pub unused_feature_rows: usize,
}

/// A validated corpus with dense ids.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub users: IdMap,
    pub items: IdMap,
    pub nodes: IdMap,
    /// Sorted by user, then item; no duplicates.
    pub pairs: Vec<(UserId, ItemId)>,
    pub hierarchy: CategoryHierarchy,
    pub features: FeatureStore,
}

impl Corpus {
    pub fn normalize_features(&mut self, norm: FeatureNorm) {
        if norm == FeatureNorm::L2 {
            self.features.l2_normalize();
        }
    }
}

struct Row {
    line: usize,
    cols: Vec<String>,
}

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(|c| c.trim().to_owned()).collect();
        if cols.len() < 2 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::parse(path, n + 1, "expected two tab-separated ids"));
        }
        rows.push(Row { line: n + 1, cols });
    }
    Ok(rows)
}

/// Feedback pairs as external ids, deduplicated; also returns the number of
/// duplicates dropped.
pub fn read_feedback(path: &Path) -> Result<(BTreeSet<(String, String)>, usize)> {
    let rows = read_rows(path)?;
    let total = rows.len();
    let pairs: BTreeSet<(String, String)> = rows
        .into_iter()
        .map(|r| {
            let mut c = r.cols.into_iter();
            (c.next().unwrap(), c.next().unwrap())
        })
        .collect();
    let dups = total - pairs.len();
    Ok((pairs, dups))
}

fn read_item_leaves(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for r in read_rows(path)? {
        let (item, leaf) = (&r.cols[0], &r.cols[1]);
        match out.get(item) {
            Some(prev) if prev != leaf => {
                return Err(Error::parse(path, r.line, format!("item `{item}` is already in `{prev}`")));
            }
            _ => {
                out.insert(item.clone(), leaf.clone());
            }
        }
    }
    Ok(out)
}

fn read_edges(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(read_rows(path)?
        .into_iter()
        .map(|r| {
            let mut c = r.cols.into_iter();
            (c.next().unwrap(), c.next().unwrap())
        })
        .collect())
}

pub fn load_corpus(paths: &InputPaths, policy: Policy) -> Result<(Corpus, IngestReport)> {
    let (feedback, duplicate_pairs) = read_feedback(&paths.feedback)?;
    if feedback.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let edges = read_edges(&paths.hierarchy)?;
    let item_leaves = read_item_leaves(&paths.item_leaves)?;
    let raw = features::read(&paths.features)?;

    let mut feature_row: HashMap<&str, usize> = HashMap::with_capacity(raw.ids.len());
    for (k, id) in raw.ids.iter().enumerate() {
        if feature_row.insert(id, k).is_some() {
            return Err(Error::format(&paths.features, format!("item `{id}` has two feature rows")));
        }
    }

    let node_names: BTreeSet<&str> = if edges.is_empty() {
        // A tree without edges is a single root; the item file names it.
        item_leaves.values().map(String::as_str).collect()
    } else {
        edges.iter().flat_map(|(c, p)| [c.as_str(), p.as_str()]).collect()
    };

    let catalog: BTreeSet<&str> =
        feedback.iter().map(|(_, i)| i.as_str()).chain(item_leaves.keys().map(String::as_str)).collect();
    let mut pruned = BTreeSet::new();
    for &item in &catalog {
        let problem = match item_leaves.get(item) {
            None => Some(Error::OrphanItem(item.to_owned())),
            Some(leaf) if !node_names.contains(leaf.as_str()) => {
                Some(Error::DanglingLeaf { item: item.to_owned(), node: leaf.clone() })
            }
            Some(_) if !feature_row.contains_key(item) => Some(Error::OrphanItem(item.to_owned())),
            Some(_) => None,
        };
        if let Some(e) = problem {
            match policy {
                Policy::Strict => return Err(e),
                Policy::Prune => {
                    pruned.insert(item);
                }
            }
        }
    }

    let kept_pairs: Vec<&(String, String)> = feedback.iter().filter(|(_, i)| !pruned.contains(i.as_str())).collect();
    if kept_pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let all_users: BTreeSet<&str> = feedback.iter().map(|(u, _)| u.as_str()).collect();
    let users = IdMap::from_ids(kept_pairs.iter().map(|(u, _)| u.as_str()));
    let items = IdMap::from_ids(catalog.iter().filter(|i| !pruned.contains(*i)).copied());
    let nodes = IdMap::from_ids(node_names.iter().copied());

    let node = |s: &str| NodeId(nodes.get(s).expect("node collected above"));
    let dense_edges: Vec<(NodeId, NodeId)> = edges.iter().map(|(c, p)| (node(c), node(p))).collect();
    let leaves: Vec<NodeId> = items.ids().iter().map(|i| node(&item_leaves[i])).collect();
    let hierarchy = CategoryHierarchy::build(nodes.len(), &dense_edges, &leaves)
        .context(|| paths.hierarchy.display().to_string())?;

    let mut data = Vec::with_capacity(items.len() * raw.dim);
    for id in items.ids() {
        data.extend_from_slice(raw.row(feature_row[id.as_str()]));
    }
    let features = FeatureStore::new(raw.dim, items.len(), data).context(|| paths.features.display().to_string())?;

    let mut pairs: Vec<(UserId, ItemId)> =
        kept_pairs.iter().map(|(u, i)| (UserId(users.get(u).unwrap()), ItemId(items.get(i).unwrap()))).collect();
    pairs.sort_unstable();

    let report = IngestReport {
        policy,
        users: users.len(),
        items: items.len(),
        nodes: nodes.len(),
        feedback_pairs: pairs.len(),
        duplicate_pairs,
        feature_dim: raw.dim,
        height: hierarchy.height(),
        effective_height: hierarchy.effective_height(),
        pruned_items: pruned.iter().map(|s| s.to_string()).collect(),
        pruned_pairs: feedback.len() - kept_pairs.len(),
        pruned_users: all_users.len() - users.len(),
        unused_feature_rows: raw.ids.iter().filter(|id| !catalog.contains(id.as_str())).count(),
    };
    Ok((Corpus { users, items, nodes, pairs, hierarchy, features }, report))
}
