//! Leave-one-out split and per-user average AUC in warm and cold settings.
//!
//! For a user `u` with held-out item `t`, the user's AUC term is the fraction
//! of non-positive candidates `j` (items outside the user's full positive set)
//! with `score(u, j) < score(u, t)`. Ties count as misses. The reported AUC is
//! the mean of these terms over the users that could be evaluated.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ItemId, UserId};
use crate::training::TrainingCorpus;

/// Anything that can score a (user, item) pair. Implementations used for
/// evaluation must be pure.
pub trait Scorer {
    fn item_count(&self) -> usize;
    fn score(&self, user: UserId, item: ItemId) -> f64;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn item_count(&self) -> usize {
        (**self).item_count()
    }

    fn score(&self, user: UserId, item: ItemId) -> f64 {
        (**self).score(user, item)
    }
}

/// A dense users x items table of scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    items: usize,
    scores: Vec<f64>,
}

impl ScoreTable {
    pub fn new(users: usize, items: usize, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), users * items);
        ScoreTable { items, scores }
    }

    /// Applies `f` to every score.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScoreTable { items: self.items, scores: self.scores.iter().map(|&s| f(s)).collect() }
    }
}

impl Scorer for ScoreTable {
    fn item_count(&self) -> usize {
        self.items
    }

    fn score(&self, user: UserId, item: ItemId) -> f64 {
        self.scores[user.index() * self.items + item.index()]
    }
}

/// Held-out validation and test items per user.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvalSplit {
    pub val_item: Vec<Option<ItemId>>,
    pub test_item: Vec<Option<ItemId>>,
    /// Users with fewer than two positives; they train but are never scored.
    pub excluded_users: Vec<UserId>,
}

impl EvalSplit {
    pub fn held_out(&self, user: UserId, target: Target) -> Option<ItemId> {
        match target {
            Target::Test => self.test_item[user.index()],
            Target::Validation => self.val_item[user.index()],
        }
    }
}

/// Which held-out item is ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Test,
    Validation,
}

/// Items seen fewer than `threshold` times in training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColdItemSet {
    threshold: u32,
    cold: Vec<bool>,
    count: usize,
}

impl ColdItemSet {
    pub const DEFAULT_THRESHOLD: u32 = 5;

    pub fn from_training(corpus: &TrainingCorpus, threshold: u32) -> Self {
        let cold: Vec<bool> = corpus.item_counts().iter().map(|&c| c < threshold).collect();
        let count = cold.iter().filter(|&&c| c).count();
        ColdItemSet { threshold, cold, count }
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn is_cold(&self, item: ItemId) -> bool {
        self.cold.get(item.index()).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.cold.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| ItemId::from_index(i))
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Setting<'a> {
    /// Every test item, every non-positive candidate.
    Warm,
    /// Only users whose held-out item is cold; only cold candidates.
    Cold(&'a ColdItemSet),
}

impl Setting<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Warm => "warm",
            Setting::Cold(_) => "cold",
        }
    }

    #[inline]
    fn admits(&self, item: ItemId) -> bool {
        match self {
            Setting::Warm => true,
            Setting::Cold(c) => c.is_cold(item),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AucResult {
    pub auc: f64,
    pub users_evaluated: usize,
}

/// Splits each user's positives: users with at least three positives give
/// one validation and one test item, users with two give a test item only,
/// users with one only train.
pub fn split_leave_one_out(
    user_count: usize,
    item_count: usize,
    pairs: &[(UserId, ItemId)],
    seed: u64,
) -> Result<(TrainingCorpus, EvalSplit)> {
    let mut positives: Vec<Vec<ItemId>> = vec![Vec::new(); user_count];
    for &(u, i) in pairs {
        if u.index() >= user_count {
            return Err(Error::UnknownUser(u));
        }
        if i.index() >= item_count {
            return Err(Error::UnknownItem(i));
        }
        positives[u.index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_item = vec![None; user_count];
    let mut test_item = vec![None; user_count];
    let mut excluded_users = Vec::new();
    let mut train = Vec::with_capacity(user_count);
    for (u, pos) in positives.iter_mut().enumerate() {
        pos.sort_unstable();
        pos.dedup();
        let n = pos.len();
        let mut held = [None, None];
        match n {
            0 | 1 => excluded_users.push(UserId::from_index(u)),
            2 => held[1] = Some(rng.random_range(0..n)),
            _ => {
                let v = rng.random_range(0..n);
                let mut t = rng.random_range(0..n - 1);
                if t >= v {
                    t += 1;
                }
                held = [Some(v), Some(t)];
            }
        }
        val_item[u] = held[0].map(|k| pos[k]);
        test_item[u] = held[1].map(|k| pos[k]);
        train.push(
            pos.iter().enumerate().filter(|(k, _)| !held.contains(&Some(*k))).map(|(_, &i)| i).collect::<Vec<_>>(),
        );
    }
    let corpus = TrainingCorpus::new(user_count, item_count, train, positives)?;
    Ok((corpus, EvalSplit { val_item, test_item, excluded_users }))
}

/// Average AUC by full enumeration of each user's candidates.
pub fn auc<S: Scorer + ?Sized>(
    scorer: &S,
    corpus: &TrainingCorpus,
    split: &EvalSplit,
    setting: Setting<'_>,
    target: Target,
) -> Result<AucResult> {
    let mut total = 0.0;
    let mut users = 0usize;
    for u in 0..corpus.user_count() {
        let user = UserId::from_index(u);
        let Some(held) = split.held_out(user, target) else { continue };
        if !setting.admits(held) {
            continue;
        }
        let s_held = scorer.score(user, held);
        let (mut below, mut candidates) = (0usize, 0usize);
        for j in NonPositives::new(corpus.positives(user), corpus.item_count()) {
            if !setting.admits(j) {
                continue;
            }
            candidates += 1;
            if scorer.score(user, j) < s_held {
                below += 1;
            }
        }
        if candidates > 0 {
            total += below as f64 / candidates as f64;
            users += 1;
        }
    }
    finish(total, users)
}

/// Approximate AUC: each user's term is estimated from `samples` candidates
/// drawn uniformly with replacement.
pub fn auc_sampled<S: Scorer + ?Sized>(
    scorer: &S,
    corpus: &TrainingCorpus,
    split: &EvalSplit,
    setting: Setting<'_>,
    target: Target,
    samples: usize,
    seed: u64,
) -> Result<AucResult> {
    if samples == 0 {
        return Err(Error::InvalidConfig("candidate sample size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::new();
    let mut total = 0.0;
    let mut users = 0usize;
    for u in 0..corpus.user_count() {
        let user = UserId::from_index(u);
        let Some(held) = split.held_out(user, target) else { continue };
        if !setting.admits(held) {
            continue;
        }
        pool.clear();
        pool.extend(NonPositives::new(corpus.positives(user), corpus.item_count()).filter(|&j| setting.admits(j)));
        if pool.is_empty() {
            continue;
        }
        let s_held = scorer.score(user, held);
        let below = (0..samples).filter(|_| scorer.score(user, pool[rng.random_range(0..pool.len())]) < s_held).count();
        total += below as f64 / samples as f64;
        users += 1;
    }
    finish(total, users)
}

fn finish(total: f64, users: usize) -> Result<AucResult> {
    if users == 0 {
        return Err(Error::NoEvaluableUsers);
    }
    Ok(AucResult { auc: total / users as f64, users_evaluated: users })
}

/// Items `0..item_count` not in the sorted slice `positives`.
struct NonPositives<'a> {
    positives: &'a [ItemId],
    next: usize,
    end: usize,
}

impl<'a> NonPositives<'a> {
    fn new(positives: &'a [ItemId], end: usize) -> Self {
        NonPositives { positives, next: 0, end }
    }
}

impl Iterator for NonPositives<'_> {
    type Item = ItemId;

    fn next(&mut self) -> Option<ItemId> {
        while self.next < self.end {
            let i = self.next;
            self.next += 1;
            match self.positives.first() {
                Some(p) if p.index() == i => self.positives = &self.positives[1..],
                _ => return Some(ItemId::from_index(i)),
            }
        }
        None
    }
}

/// Warm and cold test AUC of one model.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvalReport {
    pub warm: AucResult,
    /// `None` when no user has a cold test item.
    pub cold: Option<AucResult>,
    pub items_total: usize,
    pub cold_items: usize,
    pub cold_threshold: u32,
}

pub fn evaluate_report<S: Scorer + ?Sized>(
    scorer: &S,
    corpus: &TrainingCorpus,
    split: &EvalSplit,
    cold_set: &ColdItemSet,
) -> Result<EvalReport> {
    let warm = auc(scorer, corpus, split, Setting::Warm, Target::Test)?;
    let cold = match auc(scorer, corpus, split, Setting::Cold(cold_set), Target::Test) {
        Ok(r) => Some(r),
        Err(Error::NoEvaluableUsers) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        warm,
        cold,
        items_total: corpus.item_count(),
        cold_items: cold_set.len(),
        cold_threshold: cold_set.threshold(),
    })
}

/// Fraction of test items that are cold.
pub fn cold_test_fraction(split: &EvalSplit, cold_set: &ColdItemSet) -> f64 {
    let tests: Vec<ItemId> = split.test_item.iter().flatten().copied().collect();
    if tests.is_empty() {
        return 0.0;
    }
    tests.iter().filter(|&&i| cold_set.is_cold(i)).count() as f64 / tests.len() as f64
}
