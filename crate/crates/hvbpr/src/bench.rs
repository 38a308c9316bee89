//! Wall-clock cost of a single triple update.
//!
//! Configurations are measured in interleaved rounds so that slow drift in
//! machine load hits all of them alike; each round times a fixed batch of
//! pre-drawn triples.

use std::time::Instant;

use hvbpr_core::model::{make_baseline, BaselineBudget};
use hvbpr_core::training::{sgd_step, Triple, TripleGradient};
use hvbpr_core::{CategoryHierarchy, FeatureStore, ItemId, Model, ModelKind, RegConfig, TrainConfig, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Context, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ProbeConfig {
    pub k: usize,
    pub kprime: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ProbeOptions {
    pub users: usize,
    pub items: usize,
    pub steps: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { users: 64, items: 256, steps: 2000, rounds: 15, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProbeRow {
    pub config: ProbeConfig,
    /// Over all timed steps.
    pub mean_ns: f64,
    /// Median of the per-round means.
    pub median_ns: f64,
    pub steps: usize,
}

struct Bench {
    model: Model,
    features: FeatureStore,
    grad: TripleGradient,
}

fn setup(c: ProbeConfig, opts: &ProbeOptions) -> Result<Bench> {
    let budget =
        BaselineBudget { total_dims: c.k + c.kprime, visual_dims: c.kprime, scheme: None, init_seed: opts.seed };
    let config = make_baseline(ModelKind::Vbpr, &budget).context(|| "probe model".into())?;
    let hierarchy = CategoryHierarchy::single_root(opts.items);
    let model = Model::new(config, hierarchy, opts.users, c.feature_dim).context(|| "probe model".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let data = (0..opts.items * c.feature_dim).map(|_| rng.random::<f32>()).collect();
    let features = FeatureStore::new(c.feature_dim, opts.items, data).context(|| "probe features".into())?;
    let grad = TripleGradient::new(&model);
    Ok(Bench { model, features, grad })
}

fn triples(opts: &ProbeOptions) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.steps)
        .map(|_| {
            let pos = rng.random_range(0..opts.items);
            let mut neg = rng.random_range(0..opts.items - 1);
            if neg >= pos {
                neg += 1;
            }
            Triple {
                user: UserId::from_index(rng.random_range(0..opts.users)),
                pos: ItemId::from_index(pos),
                neg: ItemId::from_index(neg),
            }
        })
        .collect()
}

/// Times `sgd_step` for every configuration. A tiny learning rate keeps the
/// parameters, and hence the arithmetic, stable across rounds.
pub fn per_triple_cost_probe(configs: &[ProbeConfig], opts: &ProbeOptions) -> Result<Vec<ProbeRow>> {
    if opts.items < 2 || opts.users == 0 || opts.steps == 0 || opts.rounds == 0 {
        return Err(Error::Invalid("probe needs at least 2 items, 1 user, 1 step and 1 round".into()));
    }
    let train = TrainConfig { learning_rate: 1e-6, reg: RegConfig::default(), ..TrainConfig::default() };
    let stream = triples(opts);
    let mut benches = configs.iter().map(|&c| setup(c, opts)).collect::<Result<Vec<_>>>()?;

    // one untimed pass warms caches and the branch predictor
    let mut per_round: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.rounds); configs.len()];
    for round in 0..=opts.rounds {
        for (b, times) in benches.iter_mut().zip(&mut per_round) {
            let start = Instant::now();
            for &t in &stream {
                sgd_step(&mut b.model, &b.features, t, &train, &mut b.grad).context(|| "probe step".into())?;
            }
            let ns = start.elapsed().as_nanos() as f64 / opts.steps as f64;
            if round > 0 {
                times.push(ns);
            }
        }
    }

    Ok(configs
        .iter()
        .zip(per_round)
        .map(|(&config, mut times)| {
            let mean_ns = times.iter().sum::<f64>() / times.len() as f64;
            times.sort_by(f64::total_cmp);
            let mid = times.len() / 2;
            let median_ns = if times.len() % 2 == 1 { times[mid] } else { (times[mid - 1] + times[mid]) / 2.0 };
            ProbeRow { config, mean_ns, median_ns, steps: opts.steps * opts.rounds }
        })
        .collect())
}
