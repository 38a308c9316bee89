//! Pairwise-ranking SGD.
//!
//! Each step samples a user `u`, one of the user's training positives `i` and
//! a non-positive `j`, then moves every parameter the triple touches by
//! `lr * (c * d(x_ui - x_uj)/dp - reg * p)` with `c = sigmoid(x_uj - x_ui)`.
//! Regularization only reaches touched parameters, which keeps a step at
//! `O(K' F + K)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::embedding::{self, FeatureStore, SegmentGrad};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalSplit, Setting, Target};
use crate::ids::{ItemId, NodeId, UserId};
use crate::model::{Model, ModelParams};
use crate::numeric::{all_finite, log_sigmoid, sigmoid};

/// Rejection-sampling budget for one negative item.
pub const MAX_REJECTIONS: usize = 1000;

/// L2 strength per parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default, deny_unknown_fields))]
pub struct RegConfig {
    /// `beta_i`
    pub bias: f64,
    /// `gamma_u`, `gamma_i`
    pub latent: f64,
    /// `theta_u`
    pub user_visual: f64,
    /// `vbias`
    pub visual_bias: f64,
    pub segments: f64,
    pub category_bias: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig { bias: 0.01, latent: 0.01, user_visual: 0.01, visual_bias: 0.0, segments: 0.0, category_bias: 0.01 }
    }
}

impl RegConfig {
    pub fn zero() -> Self {
        RegConfig { bias: 0.0, latent: 0.0, user_visual: 0.0, visual_bias: 0.0, segments: 0.0, category_bias: 0.0 }
    }

    fn values(&self) -> [f64; 6] {
        [self.bias, self.latent, self.user_visual, self.visual_bias, self.segments, self.category_bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub reg: RegConfig,
    /// One epoch is as many sampled triples as there are training pairs.
    pub epochs: usize,
    /// Seeds the triple sampler.
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement and keep
    /// the best parameters. `None` trains all epochs and keeps the last.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.02, reg: RegConfig::default(), epochs: 60, seed: 0, patience: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and positive"));
        }
        if self.reg.values().iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig("regularization must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("at least one epoch is required"));
        }
        Ok(())
    }
}

/// Training positives per user plus the full positive sets that negatives
/// must avoid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingCorpus {
    user_count: usize,
    item_count: usize,
    train_pos: Vec<Vec<ItemId>>,
    all_pos: Vec<Vec<ItemId>>,
    active_users: Vec<UserId>,
    feedback_count: usize,
}

impl TrainingCorpus {
    /// `train_pos[u]` must be a subset of `all_pos[u]`. Both are sorted and
    /// deduplicated here.
    pub fn new(
        user_count: usize,
        item_count: usize,
        mut train_pos: Vec<Vec<ItemId>>,
        mut all_pos: Vec<Vec<ItemId>>,
    ) -> Result<Self> {
        if train_pos.len() != user_count || all_pos.len() != user_count {
            return Err(Error::InvalidConfig("positive lists must cover every user"));
        }
        for list in train_pos.iter_mut().chain(all_pos.iter_mut()) {
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|i| i.index() >= item_count) {
                return Err(Error::UnknownItem(bad));
            }
        }
        for (t, a) in train_pos.iter().zip(&all_pos) {
            if t.iter().any(|i| a.binary_search(i).is_err()) {
                return Err(Error::InvalidConfig("training positives must be positives"));
            }
        }
        let active_users = (0..user_count)
            .filter(|&u| !train_pos[u].is_empty() && all_pos[u].len() < item_count)
            .map(UserId::from_index)
            .collect();
        let feedback_count = train_pos.iter().map(Vec::len).sum();
        Ok(TrainingCorpus { user_count, item_count, train_pos, all_pos, active_users, feedback_count })
    }

    /// Every pair is a training pair; nothing is held out.
    pub fn from_pairs(user_count: usize, item_count: usize, pairs: &[(UserId, ItemId)]) -> Result<Self> {
        let mut pos = vec![Vec::new(); user_count];
        for &(u, i) in pairs {
            pos.get_mut(u.index()).ok_or(Error::UnknownUser(u))?.push(i);
        }
        Self::new(user_count, item_count, pos.clone(), pos)
    }

    pub fn user_count(&self) -> usize {
        self.user_count
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn train_positives(&self, u: UserId) -> &[ItemId] {
        &self.train_pos[u.index()]
    }

    /// Full positive set, held-out items included.
    pub fn positives(&self, u: UserId) -> &[ItemId] {
        &self.all_pos[u.index()]
    }

    pub fn is_positive(&self, u: UserId, i: ItemId) -> bool {
        self.all_pos[u.index()].binary_search(&i).is_ok()
    }

    /// Users with a training positive and at least one non-positive.
    pub fn active_users(&self) -> &[UserId] {
        &self.active_users
    }

    /// Number of training (user, item) pairs.
    pub fn feedback_count(&self) -> usize {
        self.feedback_count
    }

    /// Training occurrences per item.
    pub fn item_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.item_count];
        for list in &self.train_pos {
            for i in list {
                counts[i.index()] += 1;
            }
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub user: UserId,
    pub pos: ItemId,
    pub neg: ItemId,
}

/// Draws `(u, i, j)`: `u` uniform over active users, `i` uniform over the
/// user's training positives, `j` uniform over the user's non-positives.
pub fn sample_triple<R: Rng + ?Sized>(corpus: &TrainingCorpus, rng: &mut R) -> Result<Triple> {
    let users = corpus.active_users();
    if users.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let user = users[rng.random_range(0..users.len())];
    let train = corpus.train_positives(user);
    let pos = train[rng.random_range(0..train.len())];
    for _ in 0..MAX_REJECTIONS {
        let neg = ItemId::from_index(rng.random_range(0..corpus.item_count()));
        if !corpus.is_positive(user, neg) {
            return Ok(Triple { user, pos, neg });
        }
    }
    Err(Error::ExhaustedRejection(user))
}

/// Seeded triple stream. A user whose negatives cannot be found within the
/// rejection budget is skipped and a fresh triple is drawn.
#[derive(Clone, Debug)]
pub struct TripleSampler {
    rng: ChaCha8Rng,
}

impl TripleSampler {
    pub fn new(seed: u64) -> Self {
        TripleSampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sample(&mut self, corpus: &TrainingCorpus) -> Result<Triple> {
        let mut last = Error::EmptyCorpus;
        for _ in 0..MAX_REJECTIONS {
            match sample_triple(corpus, &mut self.rng) {
                Err(e @ Error::ExhaustedRejection(_)) => last = e,
                other => return other,
            }
        }
        Err(last)
    }
}

/// Gradient of `ln sigmoid(x_ui - x_uj)` for one triple, restricted to the
/// parameters the triple touches.
#[derive(Clone, Debug)]
pub struct TripleGradient {
    pub triple: Triple,
    /// `x_ui - x_uj` before the update.
    pub margin: f64,
    /// `sigmoid(x_uj - x_ui)`
    pub weight: f64,
    pub pos_bias: f64,
    pub neg_bias: f64,
    pub user_latent: Vec<f64>,
    pub pos_latent: Vec<f64>,
    pub neg_latent: Vec<f64>,
    pub user_visual: Vec<f64>,
    pub visual_bias: Vec<f64>,
    /// Leaf-bias partials; one entry when both items share a leaf.
    pub category_bias: Vec<(NodeId, f64)>,
    pub segments: SegmentGrad,
    theta_pos: Vec<f64>,
    theta_neg: Vec<f64>,
}

impl TripleGradient {
    pub fn new(model: &Model) -> Self {
        let (k, kv, f) = (model.latent_dim(), model.visual_dim(), model.params().visual_bias.len());
        TripleGradient {
            triple: Triple { user: UserId(0), pos: ItemId(0), neg: ItemId(0) },
            margin: 0.0,
            weight: 0.0,
            pos_bias: 0.0,
            neg_bias: 0.0,
            user_latent: vec![0.0; k],
            pos_latent: vec![0.0; k],
            neg_latent: vec![0.0; k],
            user_visual: vec![0.0; kv],
            visual_bias: vec![0.0; f],
            category_bias: Vec::with_capacity(2),
            segments: SegmentGrad::new(&model.params().segments),
            theta_pos: vec![0.0; kv],
            theta_neg: vec![0.0; kv],
        }
    }

    /// Fills every partial for `triple` from the current parameters.
    pub fn compute(&mut self, model: &Model, features: &FeatureStore, triple: Triple) -> Result<()> {
        let Triple { user: u, pos: i, neg: j } = triple;
        model.check_user(u)?;
        model.check_item(features, i)?;
        model.check_item(features, j)?;
        if i == j {
            return Err(Error::SameItem(i));
        }
        self.triple = triple;
        self.margin = model.margin_with(features, u, i, j, &mut self.theta_pos, &mut self.theta_neg);
        if !self.margin.is_finite() {
            return Err(Error::NonFiniteUpdate { group: "margin", user: u, pos: i, neg: j });
        }
        let c = sigmoid(-self.margin);
        self.weight = c;
        self.pos_bias = c;
        self.neg_bias = -c;

        let (gu, gi, gj) = (model.gamma_u(u), model.gamma_i(i), model.gamma_i(j));
        for k in 0..gu.len() {
            self.user_latent[k] = c * (gi[k] - gj[k]);
            self.pos_latent[k] = c * gu[k];
            self.neg_latent[k] = -c * gu[k];
        }
        for (g, (a, b)) in self.user_visual.iter_mut().zip(self.theta_pos.iter().zip(&self.theta_neg)) {
            *g = c * (a - b);
        }
        if model.config().use_visual_bias {
            let (fi, fj) = (features.get_unchecked(i), features.get_unchecked(j));
            for (g, (&a, &b)) in self.visual_bias.iter_mut().zip(fi.iter().zip(fj)) {
                *g = c * (f64::from(a) - f64::from(b));
            }
        }
        self.category_bias.clear();
        if model.config().use_category_bias {
            let leaves = model.hierarchy().item_leaves();
            let (li, lj) = (leaves[i.index()], leaves[j.index()]);
            if li == lj {
                self.category_bias.push((li, 0.0));
            } else {
                self.category_bias.push((li, c));
                self.category_bias.push((lj, -c));
            }
        }
        self.segments.clear();
        let a = model.assignment();
        let theta_u = model.theta_u(u);
        embedding::accumulate_unchecked(a, features, i, theta_u, c, &mut self.segments);
        embedding::accumulate_unchecked(a, features, j, theta_u, -c, &mut self.segments);
        Ok(())
    }
}

#[inline]
fn ascend(p: &mut f64, g: f64, lr: f64, reg: f64) {
    *p += lr * (g - reg * *p);
}

#[inline]
fn ascend_slice(p: &mut [f64], g: &[f64], lr: f64, reg: f64) {
    for (p, &g) in p.iter_mut().zip(g) {
        ascend(p, g, lr, reg);
    }
}

/// One stochastic ascent step on `triple`. Returns the margin before the
/// update.
pub fn sgd_step(
    model: &mut Model,
    features: &FeatureStore,
    triple: Triple,
    config: &TrainConfig,
    grad: &mut TripleGradient,
) -> Result<f64> {
    if model.is_random() {
        return Ok(0.0);
    }
    grad.compute(model, features, triple)?;
    apply(model, grad, config);
    check_touched(model, grad)?;
    Ok(grad.margin)
}

fn apply(model: &mut Model, g: &TripleGradient, config: &TrainConfig) {
    let (k, kv) = (model.latent_dim(), model.visual_dim());
    let lr = config.learning_rate;
    let reg = &config.reg;
    let Triple { user: u, pos: i, neg: j } = g.triple;
    let p: &mut ModelParams = model.params_mut();

    ascend(&mut p.item_bias[i.index()], g.pos_bias, lr, reg.bias);
    ascend(&mut p.item_bias[j.index()], g.neg_bias, lr, reg.bias);
    ascend_slice(&mut p.user_latent[u.index() * k..(u.index() + 1) * k], &g.user_latent, lr, reg.latent);
    ascend_slice(&mut p.item_latent[i.index() * k..(i.index() + 1) * k], &g.pos_latent, lr, reg.latent);
    ascend_slice(&mut p.item_latent[j.index() * k..(j.index() + 1) * k], &g.neg_latent, lr, reg.latent);
    ascend_slice(&mut p.user_visual[u.index() * kv..(u.index() + 1) * kv], &g.user_visual, lr, reg.user_visual);
    ascend_slice(&mut p.visual_bias, &g.visual_bias, lr, reg.visual_bias);
    for &(node, d) in &g.category_bias {
        ascend(&mut p.category_bias[node.index()], d, lr, reg.category_bias);
    }
    p.segments.apply(&g.segments, lr, reg.segments);
}

fn check_touched(model: &Model, g: &TripleGradient) -> Result<()> {
    let Triple { user: u, pos: i, neg: j } = g.triple;
    let (k, kv) = (model.latent_dim(), model.visual_dim());
    let p = model.params();
    let fail = |group| Error::NonFiniteUpdate { group, user: u, pos: i, neg: j };
    if !(p.item_bias[i.index()].is_finite() && p.item_bias[j.index()].is_finite()) {
        return Err(fail("item_bias"));
    }
    let latent_ok = all_finite(&p.user_latent[u.index() * k..(u.index() + 1) * k])
        && all_finite(&p.item_latent[i.index() * k..(i.index() + 1) * k])
        && all_finite(&p.item_latent[j.index() * k..(j.index() + 1) * k]);
    if !latent_ok {
        return Err(fail("latent"));
    }
    if !all_finite(&p.user_visual[u.index() * kv..(u.index() + 1) * kv]) {
        return Err(fail("user_visual"));
    }
    if !all_finite(&p.visual_bias) {
        return Err(fail("visual_bias"));
    }
    if g.category_bias.iter().any(|(n, _)| !p.category_bias[n.index()].is_finite()) {
        return Err(fail("category_bias"));
    }
    if g.segments.touched().iter().any(|&b| !all_finite(p.segments.block(b))) {
        return Err(fail("segments"));
    }
    Ok(())
}

/// Owns the sampler and scratch buffers so epochs can be driven one at a time.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    sampler: TripleSampler,
    grad: TripleGradient,
}

impl Trainer {
    pub fn new(model: &Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { sampler: TripleSampler::new(config.seed), grad: TripleGradient::new(model), config })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Runs one epoch and returns the mean `-ln sigmoid(margin)` of the
    /// sampled triples, measured before each update.
    pub fn run_epoch(&mut self, model: &mut Model, corpus: &TrainingCorpus, features: &FeatureStore) -> Result<f64> {
        let n = corpus.feedback_count();
        if n == 0 || corpus.active_users().is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut loss = 0.0;
        for _ in 0..n {
            let t = self.sampler.sample(corpus)?;
            let m = sgd_step(model, features, t, &self.config, &mut self.grad)?;
            loss -= log_sigmoid(m);
        }
        Ok(loss / n as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub val_auc: Option<f64>,
    pub train_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: usize,
    /// Epoch whose parameters were kept when early stopping is on.
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
}

/// Trains for `config.epochs` epochs, reporting validation AUC (when a split
/// with validation items is given) to `sink` after every epoch.
pub fn train(
    model: &mut Model,
    corpus: &TrainingCorpus,
    features: &FeatureStore,
    config: &TrainConfig,
    validation: Option<&EvalSplit>,
    sink: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainSummary> {
    if corpus.feedback_count() == 0 || corpus.active_users().is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut epochs_run = 0;
    let mut best_val: Option<(usize, f64)> = None;
    for epoch in 1..=config.epochs {
        let train_loss = if model.is_random() { 0.0 } else { trainer.run_epoch(model, corpus, features)? };
        epochs_run = epoch;
        let val_auc = match validation {
            Some(split) => validation_auc(model, corpus, features, split)?,
            None => None,
        };
        sink(&EpochMetrics { epoch, val_auc, train_loss });

        if let Some(v) = val_auc {
            if best_val.is_none_or(|(_, b)| v > b) {
                best_val = Some((epoch, v));
                if config.patience.is_some() {
                    best = Some((epoch, v, model.params().clone()));
                }
            }
        }
        if let (Some(p), Some((e, _))) = (config.patience, best_val) {
            if epoch - e >= p {
                break;
            }
        }
    }
    let mut summary = TrainSummary { epochs_run, best_epoch: None, best_val_auc: best_val.map(|(_, v)| v) };
    if let Some((epoch, _, params)) = best {
        *model.params_mut() = params;
        summary.best_epoch = Some(epoch);
    }
    Ok(summary)
}

fn validation_auc(
    model: &Model,
    corpus: &TrainingCorpus,
    features: &FeatureStore,
    split: &EvalSplit,
) -> Result<Option<f64>> {
    let frozen = model.freeze_items(features)?;
    let scorer = model.scorer(&frozen);
    match evaluation::auc(&scorer, corpus, split, Setting::Warm, Target::Validation) {
        Ok(r) => Ok(Some(r.auc)),
        Err(Error::NoEvaluableUsers) => Ok(None),
        Err(e) => Err(e),
    }
}
