//! The preference predictor and its baseline configurations.
//!
//! ```text
//! score(u, i) = <theta_u, theta_i> + <gamma_u, gamma_i> + <vbias, f_i> + beta_i [+ b_leaf(i)]
//! ```
//!
//! `theta_i` is never stored while training; it is projected from the segment
//! blocks on every call. [`FrozenItems`] caches it once a model is final.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::embedding::{self, FeatureStore, SegmentStore};
use crate::error::{Error, Result};
use crate::evaluation::Scorer;
use crate::hierarchy::{AllocationScheme, CategoryHierarchy, LayerAssignment};
use crate::ids::{ItemId, NodeId, UserId};
use crate::numeric::{dot, dot_f32};

/// Half-width of the uniform initialization of latent factors.
pub const LATENT_INIT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "kebab-case"))]
pub enum ModelKind {
    /// Seeded random ranking; no parameters.
    #[cfg_attr(feature = "serde", serde(rename = "rand"))]
    Random,
    /// Latent factors and item biases only.
    BprMf,
    /// One global embedding (all visual rows on the root).
    Vbpr,
    /// `Vbpr` plus a bias per leaf category.
    VbprC,
    /// Visual rows spread over tree layers.
    Hierarchical,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Random, ModelKind::BprMf, ModelKind::Vbpr, ModelKind::VbprC, ModelKind::Hierarchical];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Random => "rand",
            ModelKind::BprMf => "bpr-mf",
            ModelKind::Vbpr => "vbpr",
            ModelKind::VbprC => "vbpr-c",
            ModelKind::Hierarchical => "hierarchical",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or(Error::InvalidConfig("unknown model kind"))
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// `K`, non-visual latent dimensions.
    pub latent_dim: usize,
    /// `K'`, visual dimensions.
    pub visual_dim: usize,
    pub scheme: AllocationScheme,
    pub use_visual_bias: bool,
    pub use_category_bias: bool,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scheme.total() != self.visual_dim {
            return Err(Error::SchemeMismatch { scheme_total: self.scheme.total(), visual_dim: self.visual_dim });
        }
        if self.kind == ModelKind::Random && self.latent_dim + self.visual_dim > 0 {
            return Err(Error::InvalidConfig("the random baseline has no factors"));
        }
        Ok(())
    }
}

/// Dimension budget shared by the baselines: `total_dims = K + K'`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineBudget {
    pub total_dims: usize,
    pub visual_dims: usize,
    /// Required shape for [`ModelKind::Hierarchical`]; must be all-root for
    /// `Vbpr`/`VbprC` when given.
    pub scheme: Option<AllocationScheme>,
    pub init_seed: u64,
}

impl Default for BaselineBudget {
    fn default() -> Self {
        BaselineBudget { total_dims: 20, visual_dims: 10, scheme: None, init_seed: 0 }
    }
}

/// Expresses each compared method as a configuration of the one predictor.
pub fn make_baseline(kind: ModelKind, budget: &BaselineBudget) -> Result<ModelConfig> {
    if budget.visual_dims > budget.total_dims {
        return Err(Error::InvalidConfig("visual dimensions exceed the total budget"));
    }
    let latent = budget.total_dims - budget.visual_dims;
    let visual_scheme = || -> Result<AllocationScheme> {
        match &budget.scheme {
            None => Ok(AllocationScheme::single(budget.visual_dims)),
            Some(s) if s.total() != budget.visual_dims => {
                Err(Error::SchemeMismatch { scheme_total: s.total(), visual_dim: budget.visual_dims })
            }
            Some(s) => Ok(s.clone()),
        }
    };
    let cfg = |latent_dim, visual_dim, scheme, vb, cb| ModelConfig {
        kind,
        latent_dim,
        visual_dim,
        scheme,
        use_visual_bias: vb,
        use_category_bias: cb,
        init_seed: budget.init_seed,
    };
    let config = match kind {
        ModelKind::Random => cfg(0, 0, AllocationScheme::default(), false, false),
        ModelKind::BprMf => cfg(budget.total_dims, 0, AllocationScheme::default(), false, false),
        ModelKind::Vbpr | ModelKind::VbprC => {
            let scheme = visual_scheme()?;
            if !scheme.is_root_only() {
                return Err(Error::InvalidSchemeForBaseline(
                    "a single-embedding model keeps every visual row on the root",
                ));
            }
            cfg(latent, budget.visual_dims, scheme.trimmed(), true, kind == ModelKind::VbprC)
        }
        ModelKind::Hierarchical => cfg(latent, budget.visual_dims, visual_scheme()?, true, false),
    };
    config.validate()?;
    Ok(config)
}

/// Every learnable parameter. Matrices are row-major, one row per user/item.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelParams {
    /// `beta_i`
    pub item_bias: Vec<f64>,
    /// `gamma_i`, items x K
    pub item_latent: Vec<f64>,
    /// `gamma_u`, users x K
    pub user_latent: Vec<f64>,
    /// `theta_u`, users x K'
    pub user_visual: Vec<f64>,
    /// `vbias`, length F when enabled, else empty
    pub visual_bias: Vec<f64>,
    pub segments: SegmentStore,
    /// Per tree node (only leaves are used) when enabled, else empty.
    pub category_bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(try_from = "ModelParts", into = "ModelParts"))]
pub struct Model {
    config: ModelConfig,
    hierarchy: CategoryHierarchy,
    assignment: LayerAssignment,
    user_count: usize,
    feature_dim: usize,
    params: ModelParams,
}

/// Serialized form of a model; shapes are re-checked on load.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelParts {
    pub config: ModelConfig,
    pub hierarchy: CategoryHierarchy,
    pub user_count: usize,
    pub feature_dim: usize,
    pub params: ModelParams,
}

impl TryFrom<ModelParts> for Model {
    type Error = Error;

    fn try_from(p: ModelParts) -> Result<Self> {
        let mut model = Model::new(p.config, p.hierarchy, p.user_count, p.feature_dim)?;
        let expect = &model.params;
        let ok = p.params.item_bias.len() == expect.item_bias.len()
            && p.params.item_latent.len() == expect.item_latent.len()
            && p.params.user_latent.len() == expect.user_latent.len()
            && p.params.user_visual.len() == expect.user_visual.len()
            && p.params.visual_bias.len() == expect.visual_bias.len()
            && p.params.category_bias.len() == expect.category_bias.len()
            && p.params.segments.matches(&model.assignment, model.feature_dim);
        if !ok {
            return Err(Error::InvalidConfig("parameter shapes do not match the configuration"));
        }
        model.params = p.params;
        Ok(model)
    }
}

impl From<Model> for ModelParts {
    fn from(m: Model) -> Self {
        ModelParts {
            config: m.config,
            hierarchy: m.hierarchy,
            user_count: m.user_count,
            feature_dim: m.feature_dim,
            params: m.params,
        }
    }
}

impl Model {
    /// Allocates and initializes parameters for `user_count` users and the
    /// hierarchy's items.
    ///
    /// Latent factors (`gamma`, `theta_u`) are uniform in `+-0.05`, segment
    /// entries uniform in `+-1/sqrt(F)`, all biases zero. Draw order is fixed:
    /// item latent, user latent, user visual, segments.
    pub fn new(
        config: ModelConfig,
        hierarchy: CategoryHierarchy,
        user_count: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        config.validate()?;
        let assignment = LayerAssignment::new(&hierarchy, &config.scheme)?;
        let n_items = hierarchy.item_count();
        let (k, kv) = (config.latent_dim, config.visual_dim);

        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut uniform =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-LATENT_INIT..=LATENT_INIT)).collect() };
        let item_latent = uniform(n_items * k);
        let user_latent = uniform(user_count * k);
        let user_visual = uniform(user_count * kv);
        let mut segments = SegmentStore::zeros(&assignment, feature_dim);
        if feature_dim > 0 {
            segments.init_uniform(&mut rng, 1.0 / libm::sqrt(feature_dim as f64));
        }

        let params = ModelParams {
            item_bias: vec![0.0; n_items],
            item_latent,
            user_latent,
            user_visual,
            visual_bias: vec![0.0; if config.use_visual_bias { feature_dim } else { 0 }],
            segments,
            category_bias: vec![0.0; if config.use_category_bias { hierarchy.node_count() } else { 0 }],
        };
        Ok(Model { config, hierarchy, assignment, user_count, feature_dim, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &CategoryHierarchy {
        &self.hierarchy
    }

    pub fn assignment(&self) -> &LayerAssignment {
        &self.assignment
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Mutable parameters. Callers must keep vector lengths unchanged.
    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn user_count(&self) -> usize {
        self.user_count
    }

    pub fn item_count(&self) -> usize {
        self.hierarchy.item_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn visual_dim(&self) -> usize {
        self.config.visual_dim
    }

    pub fn is_random(&self) -> bool {
        self.config.kind == ModelKind::Random
    }

    pub(crate) fn check_user(&self, u: UserId) -> Result<()> {
        if u.index() < self.user_count {
            Ok(())
        } else {
            Err(Error::UnknownUser(u))
        }
    }

    pub(crate) fn check_item(&self, features: &FeatureStore, i: ItemId) -> Result<()> {
        if i.index() >= self.item_count() {
            return Err(Error::UnknownItem(i));
        }
        if !self.is_random() {
            if features.dim() != self.feature_dim {
                return Err(Error::DimensionMismatch { expected: self.feature_dim, found: features.dim() });
            }
            if i.index() >= features.item_count() {
                return Err(Error::MissingFeature(i));
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn gamma_u(&self, u: UserId) -> &[f64] {
        let k = self.config.latent_dim;
        &self.params.user_latent[u.index() * k..(u.index() + 1) * k]
    }

    #[inline]
    pub(crate) fn gamma_i(&self, i: ItemId) -> &[f64] {
        let k = self.config.latent_dim;
        &self.params.item_latent[i.index() * k..(i.index() + 1) * k]
    }

    #[inline]
    pub(crate) fn theta_u(&self, u: UserId) -> &[f64] {
        let k = self.config.visual_dim;
        &self.params.user_visual[u.index() * k..(u.index() + 1) * k]
    }

    /// `beta_i + <vbias, f_i> + b_leaf(i)`: everything that does not depend on
    /// the user.
    #[inline]
    pub(crate) fn item_offset(&self, features: &FeatureStore, i: ItemId) -> f64 {
        let mut off = self.params.item_bias[i.index()];
        if self.config.use_visual_bias {
            off += dot_f32(&self.params.visual_bias, features.get_unchecked(i));
        }
        if self.config.use_category_bias {
            off += self.params.category_bias[self.hierarchy.item_leaves()[i.index()].index()];
        }
        off
    }

    /// `theta_i` projected from the segment blocks.
    pub fn item_visual(&self, features: &FeatureStore, i: ItemId) -> Result<Vec<f64>> {
        self.check_item(features, i)?;
        let mut out = vec![0.0; self.config.visual_dim];
        embedding::project(&self.assignment, &self.params.segments, features, i, &mut out)?;
        Ok(out)
    }

    pub(crate) fn score_with(&self, features: &FeatureStore, u: UserId, i: ItemId, theta_i: &mut [f64]) -> f64 {
        if self.is_random() {
            return random_score(self.config.init_seed, u, i);
        }
        embedding::project_unchecked(&self.assignment, &self.params.segments, features, i, theta_i);
        dot(self.theta_u(u), theta_i) + dot(self.gamma_u(u), self.gamma_i(i)) + self.item_offset(features, i)
    }

    /// Predicted affinity of user `u` for item `i`.
    pub fn score(&self, features: &FeatureStore, u: UserId, i: ItemId) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(features, i)?;
        let mut theta = vec![0.0; self.config.visual_dim];
        Ok(self.score_with(features, u, i, &mut theta))
    }

    /// `score(u, i) - score(u, j)` with the user factors applied once to the
    /// item differences.
    pub fn score_margin(&self, features: &FeatureStore, u: UserId, i: ItemId, j: ItemId) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(features, i)?;
        self.check_item(features, j)?;
        if i == j {
            return Err(Error::SameItem(i));
        }
        if self.is_random() {
            let s = self.config.init_seed;
            return Ok(random_score(s, u, i) - random_score(s, u, j));
        }
        let kv = self.config.visual_dim;
        let mut ti = vec![0.0; kv];
        let mut tj = vec![0.0; kv];
        Ok(self.margin_with(features, u, i, j, &mut ti, &mut tj))
    }

    /// Margin using caller-provided projection buffers, which hold `theta_i`
    /// and `theta_j` afterwards.
    pub(crate) fn margin_with(
        &self,
        features: &FeatureStore,
        u: UserId,
        i: ItemId,
        j: ItemId,
        theta_i: &mut [f64],
        theta_j: &mut [f64],
    ) -> f64 {
        let segs = &self.params.segments;
        embedding::project_unchecked(&self.assignment, segs, features, i, theta_i);
        embedding::project_unchecked(&self.assignment, segs, features, j, theta_j);
        let visual: f64 =
            self.theta_u(u).iter().zip(theta_i.iter().zip(theta_j.iter())).map(|(t, (a, b))| t * (a - b)).sum();
        let latent: f64 = self
            .gamma_u(u)
            .iter()
            .zip(self.gamma_i(i).iter().zip(self.gamma_i(j)))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        visual + latent + (self.item_offset(features, i) - self.item_offset(features, j))
    }

    /// `theta_i[dim]` computed as one row dot product.
    pub fn dimension_score(&self, features: &FeatureStore, i: ItemId, dim: usize) -> Result<f64> {
        self.check_item(features, i)?;
        embedding::dimension_score(&self.assignment, &self.params.segments, features, i, dim)
    }

    /// Caches `theta_i` and the user-independent offset of every item.
    pub fn freeze_items(&self, features: &FeatureStore) -> Result<FrozenItems> {
        let n = self.item_count();
        let kv = self.config.visual_dim;
        if self.is_random() {
            return Ok(FrozenItems { visual_dim: 0, theta: Vec::new(), offset: vec![0.0; n] });
        }
        if n > 0 {
            self.check_item(features, ItemId::from_index(n - 1))?;
        }
        let mut theta = vec![0.0; n * kv];
        let mut offset = Vec::with_capacity(n);
        for idx in 0..n {
            let i = ItemId::from_index(idx);
            embedding::project_unchecked(
                &self.assignment,
                &self.params.segments,
                features,
                i,
                &mut theta[idx * kv..(idx + 1) * kv],
            );
            offset.push(self.item_offset(features, i));
        }
        Ok(FrozenItems { visual_dim: kv, theta, offset })
    }

    /// Scorer over frozen item data. `items` must come from
    /// [`Model::freeze_items`] on this model.
    pub fn scorer<'a>(&'a self, items: &'a FrozenItems) -> FrozenScorer<'a> {
        assert_eq!(items.offset.len(), self.item_count(), "frozen items belong to another model");
        FrozenScorer { model: self, items }
    }

    /// Top `top_n` items on visual dimension `dim`, ties broken by item id.
    pub fn rank_by_dimension(
        &self,
        features: &FeatureStore,
        dim: usize,
        filter: ItemFilter<'_>,
        top_n: usize,
    ) -> Result<Vec<(ItemId, f64)>> {
        let kv = self.config.visual_dim;
        if dim >= kv {
            return Err(Error::DimensionOutOfRange { dim, visual_dim: kv });
        }
        let mut scored = Vec::new();
        for i in filter.items(&self.hierarchy)? {
            scored.push((i, self.dimension_score(features, i, dim)?));
        }
        Ok(top_by_score(scored, top_n))
    }
}

/// Deterministic uniform score in `[0, 1)` for the random baseline.
pub fn random_score(seed: u64, u: UserId, i: ItemId) -> f64 {
    let mut x = seed ^ ((u.0 as u64) << 32 | i.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Candidate restriction for [`Model::rank_by_dimension`].
#[derive(Clone, Copy, Debug)]
pub enum ItemFilter<'a> {
    All,
    /// Items whose leaf lies in the subtree of this node.
    Category(NodeId),
    Items(&'a [ItemId]),
}

impl ItemFilter<'_> {
    fn items(&self, h: &CategoryHierarchy) -> Result<Vec<ItemId>> {
        let all = (0..h.item_count()).map(ItemId::from_index);
        Ok(match *self {
            ItemFilter::All => all.collect(),
            ItemFilter::Category(node) => {
                if node.index() >= h.node_count() {
                    return Err(Error::UnknownNode(node));
                }
                let layer = h.depth(node);
                all.filter(|&i| h.ancestor_at_layer(h.item_leaves()[i.index()], layer) == Some(node)).collect()
            }
            ItemFilter::Items(items) => {
                if let Some(&bad) = items.iter().find(|i| i.index() >= h.item_count()) {
                    return Err(Error::UnknownItem(bad));
                }
                items.to_vec()
            }
        })
    }
}

fn top_by_score(mut scored: Vec<(ItemId, f64)>, top_n: usize) -> Vec<(ItemId, f64)> {
    scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    scored
}

/// Per-item projections and offsets of a frozen model.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FrozenItems {
    visual_dim: usize,
    theta: Vec<f64>,
    offset: Vec<f64>,
}

impl FrozenItems {
    pub fn theta(&self, i: ItemId) -> &[f64] {
        &self.theta[i.index() * self.visual_dim..(i.index() + 1) * self.visual_dim]
    }

    pub fn offset(&self, i: ItemId) -> f64 {
        self.offset[i.index()]
    }

    pub fn item_count(&self) -> usize {
        self.offset.len()
    }

    /// Whether these projections have the shape `model` produces.
    pub fn matches(&self, model: &Model) -> bool {
        let kv = if model.is_random() { 0 } else { model.visual_dim() };
        self.visual_dim == kv && self.offset.len() == model.item_count() && self.theta.len() == kv * self.offset.len()
    }
}

/// Read-only scorer over a frozen model; safe to share across threads.
#[derive(Clone, Copy, Debug)]
pub struct FrozenScorer<'a> {
    model: &'a Model,
    items: &'a FrozenItems,
}

impl<'a> FrozenScorer<'a> {
    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn rank_by_dimension(&self, dim: usize, filter: ItemFilter<'_>, top_n: usize) -> Result<Vec<(ItemId, f64)>> {
        let kv = self.model.visual_dim();
        if dim >= kv {
            return Err(Error::DimensionOutOfRange { dim, visual_dim: kv });
        }
        let scored = filter.items(self.model.hierarchy())?.into_iter().map(|i| (i, self.items.theta(i)[dim])).collect();
        Ok(top_by_score(scored, top_n))
    }
}

impl Scorer for FrozenScorer<'_> {
    fn item_count(&self) -> usize {
        self.model.item_count()
    }

    #[inline]
    fn score(&self, u: UserId, i: ItemId) -> f64 {
        let m = self.model;
        if m.is_random() {
            return random_score(m.config.init_seed, u, i);
        }
        dot(m.theta_u(u), self.items.theta(i)) + dot(m.gamma_u(u), m.gamma_i(i)) + self.items.offset(i)
    }
}
