//! Finite-difference oracle for the per-triple gradient, shared by the core
//! gradient tests and the acceptance suite.
#![allow(dead_code)]

use hvbpr_core::hierarchy::CategoryHierarchy;
use hvbpr_core::model::{make_baseline, BaselineBudget, ModelKind};
use hvbpr_core::training::{Triple, TripleGradient};
use hvbpr_core::{log_sigmoid, AllocationScheme, FeatureStore, ItemId, Model, NodeId, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Group {
    ItemBias,
    ItemLatent,
    UserLatent,
    UserVisual,
    VisualBias,
    Segments,
    CategoryBias,
}

pub const GROUPS: [Group; 7] = [
    Group::ItemBias,
    Group::ItemLatent,
    Group::UserLatent,
    Group::UserVisual,
    Group::VisualBias,
    Group::Segments,
    Group::CategoryBias,
];

pub fn group_mut(m: &mut Model, g: Group) -> &mut [f64] {
    let p = m.params_mut();
    match g {
        Group::ItemBias => &mut p.item_bias,
        Group::ItemLatent => &mut p.item_latent,
        Group::UserLatent => &mut p.user_latent,
        Group::UserVisual => &mut p.user_visual,
        Group::VisualBias => &mut p.visual_bias,
        Group::Segments => p.segments.as_mut_slice(),
        Group::CategoryBias => &mut p.category_bias,
    }
}

/// Dense analytic gradient laid out like `group_mut(g)`.
pub fn analytic(m: &Model, grad: &TripleGradient, g: Group) -> Vec<f64> {
    let p = m.params();
    let (k, kv) = (m.latent_dim(), m.visual_dim());
    let Triple { user: u, pos: i, neg: j } = grad.triple;
    let mut out;
    match g {
        Group::ItemBias => {
            out = vec![0.0; p.item_bias.len()];
            out[i.index()] += grad.pos_bias;
            out[j.index()] += grad.neg_bias;
        }
        Group::ItemLatent => {
            out = vec![0.0; p.item_latent.len()];
            out[i.index() * k..(i.index() + 1) * k].copy_from_slice(&grad.pos_latent);
            out[j.index() * k..(j.index() + 1) * k].copy_from_slice(&grad.neg_latent);
        }
        Group::UserLatent => {
            out = vec![0.0; p.user_latent.len()];
            out[u.index() * k..(u.index() + 1) * k].copy_from_slice(&grad.user_latent);
        }
        Group::UserVisual => {
            out = vec![0.0; p.user_visual.len()];
            out[u.index() * kv..(u.index() + 1) * kv].copy_from_slice(&grad.user_visual);
        }
        Group::VisualBias => out = grad.visual_bias.clone(),
        Group::Segments => {
            out = vec![0.0; p.segments.as_slice().len()];
            for &b in grad.segments.touched() {
                out[p.segments.block_range(b)].copy_from_slice(grad.segments.block(b));
            }
        }
        Group::CategoryBias => {
            out = vec![0.0; p.category_bias.len()];
            for &(n, d) in &grad.category_bias {
                out[n.index()] += d;
            }
        }
    }
    out
}

pub fn objective(m: &Model, f: &FeatureStore, t: Triple) -> f64 {
    log_sigmoid(m.score_margin(f, t.user, t.pos, t.neg).unwrap())
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Root with three leaves, two items per leaf; scheme 2:1, F = 4, K = 2.
pub fn fixture(kind: ModelKind, rng: &mut ChaCha8Rng) -> (Model, FeatureStore) {
    let edges = [(NodeId(1), NodeId(0)), (NodeId(2), NodeId(0)), (NodeId(3), NodeId(0))];
    let leaves: Vec<NodeId> = (0..6).map(|i| NodeId(1 + i / 2)).collect();
    let h = CategoryHierarchy::build(4, &edges, &leaves).unwrap();
    let scheme: AllocationScheme = if kind == ModelKind::VbprC { "3" } else { "2:1" }.parse().unwrap();
    let budget = BaselineBudget { total_dims: 5, visual_dims: 3, scheme: Some(scheme), init_seed: rng.random() };
    let mut m = Model::new(make_baseline(kind, &budget).unwrap(), h, 3, 4).unwrap();
    for g in GROUPS {
        for x in group_mut(&mut m, g) {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    let data = (0..6 * 4).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    (m, FeatureStore::new(4, 6, data).unwrap())
}

pub fn random_triple(rng: &mut ChaCha8Rng) -> Triple {
    let i = rng.random_range(0..6u32);
    let mut j = rng.random_range(0..5u32);
    if j >= i {
        j += 1;
    }
    Triple { user: UserId(rng.random_range(0..3)), pos: ItemId(i), neg: ItemId(j) }
}

/// Largest relative error over `trials` random models and triples, or the
/// first partial that misses `tol`.
pub fn worst_error(kind: ModelKind, trials: usize, seed: u64, tol: f64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (mut m, f) = fixture(kind, &mut rng);
        let t = random_triple(&mut rng);
        let mut grad = TripleGradient::new(&m);
        grad.compute(&m, &f, t).unwrap();
        for g in GROUPS {
            let a = analytic(&m, &grad, g);
            for (idx, &a) in a.iter().enumerate() {
                let orig = group_mut(&mut m, g)[idx];
                group_mut(&mut m, g)[idx] = orig + STEP;
                let up = objective(&m, &f, t);
                group_mut(&mut m, g)[idx] = orig - STEP;
                let down = objective(&m, &f, t);
                group_mut(&mut m, g)[idx] = orig;
                let n = (up - down) / (2.0 * STEP);
                let e = rel_err(a, n);
                if e.is_nan() || e >= tol {
                    return Err(format!("{kind:?} {g:?}[{idx}] {t:?}: analytic {a} numeric {n}"));
                }
                worst = worst.max(e);
            }
        }
    }
    Ok(worst)
}
