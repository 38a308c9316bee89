//! Synthetic corpora with a planted category tree and category-specific
//! visual preferences.
//!
//! Items draw features from a Gaussian centred on their leaf. The planted
//! projection has global rows on the root and independent rows per node on
//! deeper layers; users hold a planted preference vector over those rows.
//! Each user's positives are sampled without replacement from a
//! Plackett-Luce (Gumbel top-k) choice over the planted scores.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::embedding::FeatureStore;
use crate::error::{Error, Result};
use crate::hierarchy::CategoryHierarchy;
use crate::ids::{ItemId, NodeId, UserId};
use crate::numeric::dot;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub feature_dim: usize,
    /// Children per node on each layer below the root; `[10]` is a root
    /// with ten leaves.
    pub branching: Vec<usize>,
    pub positives_per_user: usize,
    /// Planted rows per layer, top-down. Length at most the tree height.
    pub planted_rows: Vec<usize>,
    /// Standard deviation of the per-leaf feature means.
    pub cluster_scale: f64,
    /// Choice noise. `0` takes each user's exact top items, infinity is
    /// uniform.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 500,
            items: 1000,
            feature_dim: 64,
            branching: vec![10],
            positives_per_user: 10,
            planted_rows: vec![4, 4],
            cluster_scale: 1.0,
            temperature: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn height(&self) -> usize {
        self.branching.len() + 1
    }

    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidShape("users, items and feature_dim must be positive"));
        }
        if self.branching.contains(&0) {
            return Err(Error::InvalidShape("branching factors must be positive"));
        }
        if self.planted_rows.len() > self.height() {
            return Err(Error::InvalidShape("planted rows deeper than the tree"));
        }
        if self.planted_rows.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidShape("at least one planted row is required"));
        }
        if self.positives_per_user == 0 || self.positives_per_user >= self.items {
            return Err(Error::InvalidShape("positives per user must be in 1..items"));
        }
        let non_negative = |x: f64| x.partial_cmp(&0.0).is_some_and(|o| o.is_ge());
        if !non_negative(self.temperature) || !(non_negative(self.cluster_scale) && self.cluster_scale.is_finite()) {
            return Err(Error::InvalidShape("temperature and cluster scale must be non-negative"));
        }
        Ok(())
    }
}

/// One node's planted rows.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PlantedBlock {
    pub node: NodeId,
    /// Planted dimensions covered, `[start, end)`.
    pub dims: (usize, usize),
    /// Row-major `(end - start) x F`.
    pub rows: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GroundTruth {
    /// Total planted dimensions.
    pub dims: usize,
    pub blocks: Vec<PlantedBlock>,
    /// users x dims
    pub user_vectors: Vec<f64>,
    /// items x dims, the planted projection of every item scaled to unit
    /// length, so no item is favoured by its norm alone.
    pub item_vectors: Vec<f64>,
}

impl GroundTruth {
    pub fn item_vector(&self, i: ItemId) -> &[f64] {
        &self.item_vectors[i.index() * self.dims..(i.index() + 1) * self.dims]
    }

    pub fn user_vector(&self, u: UserId) -> &[f64] {
        &self.user_vectors[u.index() * self.dims..(u.index() + 1) * self.dims]
    }

    /// Planted affinity; unit variance over users for every item.
    pub fn score(&self, u: UserId, i: ItemId) -> f64 {
        dot(self.user_vector(u), self.item_vector(i))
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub hierarchy: CategoryHierarchy,
    pub features: FeatureStore,
    /// Sorted by user, then item; no duplicates.
    pub feedback: Vec<(UserId, ItemId)>,
    pub truth: GroundTruth,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let f = config.feature_dim;

    // tree, numbered breadth-first
    let mut edges = Vec::new();
    let mut layers: Vec<Vec<NodeId>> = vec![vec![NodeId(0)]];
    let mut next = 1u32;
    for &b in &config.branching {
        let mut layer = Vec::new();
        for &p in layers.last().expect("root layer") {
            for _ in 0..b {
                let c = NodeId(next);
                next += 1;
                edges.push((c, p));
                layer.push(c);
            }
        }
        layers.push(layer);
    }
    let node_count = next as usize;
    let leaves = layers.last().expect("root layer").clone();
    let item_leaves: Vec<NodeId> = (0..config.items).map(|_| leaves[rng.random_range(0..leaves.len())]).collect();
    let hierarchy = CategoryHierarchy::build(node_count, &edges, &item_leaves)?;

    // features: per-leaf mean plus unit noise
    let mut centres = vec![0.0f64; node_count * f];
    for &leaf in &leaves {
        for x in &mut centres[leaf.index() * f..(leaf.index() + 1) * f] {
            *x = config.cluster_scale * normal(&mut rng);
        }
    }
    let mut data = Vec::with_capacity(config.items * f);
    for &leaf in &item_leaves {
        for d in 0..f {
            data.push((centres[leaf.index() * f + d] + normal(&mut rng)) as f32);
        }
    }
    let features = FeatureStore::new(f, config.items, data)?;

    // planted projection
    let dims: usize = config.planted_rows.iter().sum();
    let row_scale = 1.0 / libm::sqrt(f as f64);
    let mut blocks = Vec::new();
    let mut block_of = vec![None; node_count];
    let mut start = 0;
    for (l, &rows) in config.planted_rows.iter().enumerate() {
        if rows > 0 {
            for &node in &layers[l] {
                block_of[node.index()] = Some(blocks.len());
                blocks.push(PlantedBlock {
                    node,
                    dims: (start, start + rows),
                    rows: (0..rows * f).map(|_| row_scale * normal(&mut rng)).collect(),
                });
            }
        }
        start += rows;
    }
    let mut item_vectors = vec![0.0; config.items * dims];
    for (i, &leaf) in item_leaves.iter().enumerate() {
        let fi = features.get_unchecked(ItemId::from_index(i));
        for anc in hierarchy.path_to(leaf) {
            let Some(b) = block_of[anc.index()] else { continue };
            let blk = &blocks[b];
            for (r, d) in (blk.dims.0..blk.dims.1).enumerate() {
                item_vectors[i * dims + d] =
                    blk.rows[r * f..(r + 1) * f].iter().zip(fi).map(|(w, &x)| w * f64::from(x)).sum();
            }
        }
        let v = &mut item_vectors[i * dims..(i + 1) * dims];
        let norm = libm::sqrt(dot(v, v));
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
    }
    let user_vectors: Vec<f64> = (0..config.users * dims).map(|_| normal(&mut rng)).collect();
    let truth = GroundTruth { dims, blocks, user_vectors, item_vectors };

    // positives: Gumbel top-k over scaled scores
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
    let k = config.positives_per_user;
    let mut feedback = Vec::with_capacity(config.users * k);
    let mut keyed: Vec<(f64, u32)> = Vec::with_capacity(config.items);
    for u in 0..config.users {
        let user = UserId::from_index(u);
        keyed.clear();
        for i in 0..config.items {
            let s = truth.score(user, ItemId::from_index(i));
            let key = if config.temperature == 0.0 {
                s
            } else if config.temperature.is_infinite() {
                gumbel.sample(&mut rng)
            } else {
                s / config.temperature + gumbel.sample(&mut rng)
            };
            keyed.push((key, i as u32));
        }
        keyed.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<u32> = keyed[..k].iter().map(|&(_, i)| i).collect();
        chosen.sort_unstable();
        feedback.extend(chosen.into_iter().map(|i| (user, ItemId(i))));
    }

    Ok(SynthCorpus { config: config.clone(), hierarchy, features, feedback, truth })
}
